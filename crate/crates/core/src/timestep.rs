//! Semi-implicit Euler shared by the macroscopic and microscopic solvers:
//! `(M + dt K) c_new = M c_old + dt * load(c_old)`.

use crate::geometry::GeometryError;
use crate::numerics::{solve_cg, CgOptions, CsrMatrix, NullSpace, NumericsError, SolveReport};
use crate::scenario::{Bindings, EvalError, Expr, Var};
use serde::Serialize;
use thiserror::Error;

/// Relative CG tolerance of every time step.
pub const STEP_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("time step {step}: CG did not converge ({} iterations, relative residual {:.3e})", .report.iterations, .report.relative_residual)]
    NotConverged { step: usize, report: SolveReport },
    #[error("time step {step}: reaction evaluation failed: {source}")]
    Reaction { step: usize, source: EvalError },
    #[error("time step {step}: solution is not finite")]
    NonFinite { step: usize },
    #[error("invalid time step {0}: must be positive and at most the final time")]
    InvalidTimeStep(f64),
    #[error("invalid snapshot times: {0}")]
    Snapshots(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("layer coefficient evaluation failed: {0}")]
    Coefficient(String),
}

/// Default step for a study whose smallest epsilon is `eps_min`.
pub fn default_dt(eps_min: f64) -> f64 {
    (eps_min * eps_min / 4.0).min(1e-3)
}

/// Uniform partition of `[0, T]` into `steps` steps of length at most `dt_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t_final: f64,
    pub steps: usize,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(t_final: f64, dt_max: f64) -> Result<Self, SolverError> {
        if !(dt_max > 0.0 && dt_max.is_finite() && dt_max <= t_final * (1.0 + 1e-12)) {
            return Err(SolverError::InvalidTimeStep(dt_max));
        }
        let steps = ((t_final / dt_max) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        Ok(Self { t_final, steps, dt: t_final / steps as f64 })
    }

    /// Time of step `k`, computed without accumulating round-off.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t_final
        } else {
            self.t_final * k as f64 / self.steps as f64
        }
    }

    /// Step indices of the requested snapshot times. Times must be strictly
    /// increasing, start at 0 and end at `T`; each is rounded to the nearest step.
    pub fn snapshot_steps(&self, times: &[f64]) -> Result<Vec<usize>, SolverError> {
        let (Some(&first), Some(&last)) = (times.first(), times.last()) else {
            return Err(SolverError::Snapshots("no snapshot times".into()));
        };
        if first != 0.0 || (last - self.t_final).abs() > 1e-12 * self.t_final.max(1.0) {
            return Err(SolverError::Snapshots(format!("times must span [0, {}], got [{first}, {last}]", self.t_final)));
        }
        let steps: Vec<usize> = times.iter().map(|t| (t / self.dt).round() as usize).collect();
        if steps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SolverError::Snapshots("times are not strictly increasing at the step resolution".into()));
        }
        Ok(steps)
    }

    /// `count` evenly spaced snapshot times including 0 and `T`.
    pub fn even_snapshots(&self, count: usize) -> Vec<f64> {
        let count = count.max(2);
        let mut idx: Vec<usize> = (0..count).map(|k| (k * self.steps + (count - 1) / 2) / (count - 1)).collect();
        idx.dedup();
        idx.into_iter().map(|k| self.time(k)).collect()
    }
}

/// Reaction term averaged over the cell variables:
/// `R(t, z) = int_{(0,1) x (y2_lo, y2_hi)} e(t, y, z) dy` by an 8 x 8 midpoint rule.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAveragedReaction {
    expr: Expr,
    uses_y: bool,
    y2_lo: f64,
    y2_hi: f64,
}

pub const AVERAGING_POINTS: usize = 8;

impl CellAveragedReaction {
    pub fn new(expr: Expr, y2_lo: f64, y2_hi: f64) -> Self {
        let uses_y = expr.depends_on(Var::Y1) || expr.depends_on(Var::Y2);
        Self { expr, uses_y, y2_lo, y2_hi }
    }

    pub fn eval(&self, t: f64, z: f64) -> Result<f64, EvalError> {
        let measure = self.y2_hi - self.y2_lo;
        let mut b = Bindings::new().with(Var::T, t).with(Var::Z, z).with(Var::Y1, 0.0).with(Var::Y2, 0.0);
        if !self.uses_y {
            return Ok(measure * self.expr.eval(&b)?);
        }
        let n = AVERAGING_POINTS as f64;
        let mut sum = 0.0;
        for a in 0..AVERAGING_POINTS {
            b.set(Var::Y1, (a as f64 + 0.5) / n);
            for c in 0..AVERAGING_POINTS {
                b.set(Var::Y2, self.y2_lo + measure * (c as f64 + 0.5) / n);
                sum += self.expr.eval(&b)?;
            }
        }
        Ok(measure * sum / (n * n))
    }
}

/// Assembled step operator. The mass is kept so that every step can be
/// corrected to conserve `1^T M c` exactly up to round-off.
#[derive(Debug, Clone)]
pub struct ImexOperator {
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    lhs: CsrMatrix,
    /// Column sums of the mass matrix (`1^T M`).
    mass_weights: Vec<f64>,
    total_weight: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepStats {
    pub steps: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
    pub max_relative_residual: f64,
    /// Largest `|1^T M c_new - 1^T rhs| / |1^T rhs|` after the correction.
    pub max_balance_defect: f64,
}

impl StepStats {
    fn record(&mut self, r: &SolveReport, defect: f64) {
        self.steps += 1;
        self.total_iterations += r.iterations;
        self.max_iterations = self.max_iterations.max(r.iterations);
        self.max_relative_residual = self.max_relative_residual.max(r.relative_residual);
        self.max_balance_defect = self.max_balance_defect.max(defect);
    }
}

impl ImexOperator {
    pub fn new(mass: CsrMatrix, stiffness: CsrMatrix, dt: f64) -> Result<Self, SolverError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SolverError::InvalidTimeStep(dt));
        }
        let lhs = CsrMatrix::linear_combination(1.0, &mass, dt, &stiffness)?;
        let mut mass_weights = vec![0.0; mass.ncols()];
        for i in 0..mass.nrows() {
            for (j, v) in mass.row(i) {
                mass_weights[j] += v;
            }
        }
        let total_weight = mass_weights.iter().sum();
        Ok(Self { mass, stiffness, lhs, mass_weights, total_weight, dt })
    }

    /// `1^T M c`, the discrete total mass.
    pub fn total_mass(&self, c: &[f64]) -> f64 {
        crate::numerics::dot(&self.mass_weights, c)
    }

    /// One step from `c_old` with the explicit load vector `load`
    /// (already multiplied by the relevant mass matrices).
    pub fn step(&self, step: usize, c_old: &[f64], load: &[f64], stats: &mut StepStats) -> Result<Vec<f64>, SolverError> {
        let mut rhs = self.mass.mul_vec(c_old);
        for (r, l) in rhs.iter_mut().zip(load) {
            *r += self.dt * l;
        }
        let (mut c, report) = solve_cg(&self.lhs, &rhs, Some(c_old), &CgOptions::with_tol(STEP_TOL), NullSpace::None)?;
        if !report.converged {
            return Err(SolverError::NotConverged { step, report });
        }
        // K 1 = 0 and K symmetric, so 1^T (M + dt K) = 1^T M: a constant shift
        // restores 1^T M c = 1^T rhs
        let target: f64 = rhs.iter().sum();
        let shift = (target - self.total_mass(&c)) / self.total_weight;
        c.iter_mut().for_each(|v| *v += shift);
        if c.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite { step });
        }
        let defect = (self.total_mass(&c) - target).abs() / target.abs().max(f64::MIN_POSITIVE);
        stats.record(&report, defect);
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_expression;

    #[test]
    fn time_grid_rounds_up() {
        let g = TimeGrid::new(0.25, 1e-3).unwrap();
        assert_eq!(g.steps, 250);
        assert_eq!(g.time(250), 0.25);
        let g = TimeGrid::new(0.25, 0.3).unwrap_err();
        assert_eq!(g, SolverError::InvalidTimeStep(0.3));
        assert!(TimeGrid::new(1.0, 0.0).is_err());
        let g = TimeGrid::new(1.0, 0.3).unwrap();
        assert_eq!(g.steps, 4);
    }

    #[test]
    fn snapshot_mapping() {
        let g = TimeGrid::new(1.0, 0.1).unwrap();
        assert_eq!(g.snapshot_steps(&[0.0, 0.5, 1.0]).unwrap(), vec![0, 5, 10]);
        assert!(g.snapshot_steps(&[0.1, 1.0]).is_err());
        assert!(g.snapshot_steps(&[0.0, 0.51, 0.52, 1.0]).is_err());
        assert_eq!(g.even_snapshots(3), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn default_step() {
        assert_eq!(default_dt(0.25), 1e-3);
        assert_eq!(default_dt(1.0 / 32.0), 1.0 / 4096.0);
    }

    #[test]
    fn cell_average() {
        let e = parse_expression("-z + sin(2*pi*y1)", &[Var::T, Var::Y1, Var::Y2, Var::Z]).unwrap();
        let r = CellAveragedReaction::new(e, -1.0, 1.0);
        assert!((r.eval(0.0, 1.5).unwrap() + 3.0).abs() < 1e-14);
        let e = parse_expression("y2^2", &[Var::Y2]).unwrap();
        // midpoint rule on (0,1): sum ((c+1/2)/8)^2 / 8 = 1/3 - 1/768
        let r = CellAveragedReaction::new(e, 0.0, 1.0);
        assert!((r.eval(0.0, 0.0).unwrap() - (1.0 / 3.0 - 1.0 / 768.0)).abs() < 1e-15);
    }
}
