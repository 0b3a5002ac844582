//! The limit transmission problem: bulk reaction-diffusion in `Omega^+-`
//! coupled through a reaction-diffusion equation on `Sigma`.
//!
//! One nodal field lives on the macro grid; the `Sigma` row is shared by both
//! bulk domains and carries the interface unknowns, so `c^+ = c^M = c^-` on
//! `Sigma` holds by construction.

use crate::cell_solver::EffectiveTensor;
use crate::fem;
use crate::geometry::{build_macro_grid, Marker, Region, StructuredGrid};
use crate::numerics::{CsrMatrix, SymTensor2};
use crate::scenario::{Bindings, Scenario, Var};
use crate::timestep::{CellAveragedReaction, ImexOperator, SolverError, StepStats, TimeGrid};
use rayon::prelude::*;
use serde::Serialize;

/// `|Z|` for the cell `(0,1) x (-1,1)`.
pub const CELL_MEASURE: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct MacroMatrices {
    /// Bulk mass plus `|Z|` times the interface line mass.
    pub mass: CsrMatrix,
    /// `D^+-` bulk stiffness plus `|Z| D*` times the interface line stiffness.
    pub stiffness: CsrMatrix,
    pub mass_plus: CsrMatrix,
    pub mass_minus: CsrMatrix,
    /// Unweighted line mass on `Sigma`.
    pub mass_sigma: CsrMatrix,
}

pub fn assemble_macro(
    grid: &StructuredGrid,
    d_plus: SymTensor2,
    d_minus: SymTensor2,
    d_star: f64,
) -> Result<MacroMatrices, SolverError> {
    let sigma = grid.require_marker(Marker::Sigma)?;
    let plus = grid.region_intervals(Region::BulkPlus);
    let minus = grid.region_intervals(Region::BulkMinus);
    if plus.as_ref().map(|r| r.start) != Some(sigma) || minus.as_ref().map(|r| r.end) != Some(sigma) {
        return Err(SolverError::GridMismatch("bulk regions do not meet at the Sigma row".into()));
    }
    let (plus, minus) = (plus.unwrap(), minus.unwrap());
    let n = grid.node_count();
    let build = |t: &fem::Triplets| CsrMatrix::from_triplets(n, n, t);

    let mut tp = Vec::new();
    fem::assemble_mass(grid, plus.clone(), 1.0, &mut tp);
    let mut tm = Vec::new();
    fem::assemble_mass(grid, minus.clone(), 1.0, &mut tm);
    let mut ts = Vec::new();
    fem::assemble_line_mass(grid, sigma, 1.0, &mut ts);

    let mut mass_t = tp.clone();
    mass_t.extend_from_slice(&tm);
    mass_t.extend(ts.iter().map(|&(i, j, v)| (i, j, CELL_MEASURE * v)));

    let mut stiff_t = Vec::new();
    fem::assemble_stiffness(grid, plus, 1.0, |_, _, _| d_plus, &mut stiff_t);
    fem::assemble_stiffness(grid, minus, 1.0, |_, _, _| d_minus, &mut stiff_t);
    if d_star != 0.0 {
        fem::assemble_line_stiffness(grid, sigma, CELL_MEASURE * d_star, &mut stiff_t);
    }
    Ok(MacroMatrices {
        mass: build(&mass_t)?,
        stiffness: build(&stiff_t)?,
        mass_plus: build(&tp)?,
        mass_minus: build(&tm)?,
        mass_sigma: build(&ts)?,
    })
}

/// Assembled macro problem for one grid, coefficient set and step.
#[derive(Debug, Clone)]
pub struct MacroSystem {
    pub grid: StructuredGrid,
    pub sigma_row: usize,
    pub matrices: MacroMatrices,
    pub operator: ImexOperator,
    pub d_star: f64,
}

impl MacroSystem {
    pub fn new(scenario: &Scenario, d_star: &EffectiveTensor, per_unit: usize, dt: f64) -> Result<Self, SolverError> {
        let g = &scenario.geometry;
        let grid = build_macro_grid(g.height, g.sigma_len, per_unit)?;
        let sigma_row = grid.require_marker(Marker::Sigma)?;
        let matrices = assemble_macro(&grid, scenario.d_plus_tensor(), scenario.d_minus_tensor(), d_star.d11())?;
        let operator = ImexOperator::new(matrices.mass.clone(), matrices.stiffness.clone(), dt)?;
        Ok(Self { grid, sigma_row, matrices, operator, d_star: d_star.d11() })
    }

    /// Nodal interpolant of the initial data; the `Sigma` row takes `init_M`.
    pub fn initial_state(&self, scenario: &Scenario) -> Result<Vec<f64>, SolverError> {
        let grid = &self.grid;
        let mut c = vec![0.0; grid.node_count()];
        for j in 0..grid.ny() {
            let (expr, x2) = match j.cmp(&self.sigma_row) {
                std::cmp::Ordering::Greater => (&scenario.init_plus, grid.ys()[j]),
                std::cmp::Ordering::Less => (&scenario.init_minus, grid.ys()[j]),
                std::cmp::Ordering::Equal => (&scenario.init_m, 0.0),
            };
            for i in 0..grid.nx() {
                let b = Bindings::new().with(Var::X1, grid.x(i)).with(Var::X2, x2);
                c[grid.node(i, j)] = expr.eval(&b).map_err(|source| SolverError::Reaction { step: 0, source })?;
            }
        }
        Ok(c)
    }
}

/// Bulk and interface reactions averaged over the cell variables.
#[derive(Debug, Clone)]
pub struct MacroReactions {
    pub f_plus: CellAveragedReaction,
    pub f_minus: CellAveragedReaction,
    /// `int_Z g dy` (includes the factor `|Z|`).
    pub g: CellAveragedReaction,
}

impl MacroReactions {
    pub fn new(s: &Scenario) -> Self {
        Self {
            f_plus: CellAveragedReaction::new(s.f_plus.clone(), 0.0, 1.0),
            f_minus: CellAveragedReaction::new(s.f_minus.clone(), 0.0, 1.0),
            g: CellAveragedReaction::new(s.g_m.clone(), -1.0, 1.0),
        }
    }
}

fn eval_rows(
    grid: &StructuredGrid,
    rows: std::ops::RangeInclusive<usize>,
    c: &[f64],
    f: impl Fn(f64) -> Result<f64, crate::scenario::EvalError> + Sync,
    step: usize,
) -> Result<Vec<f64>, SolverError> {
    let nx = grid.nx();
    let mut out = vec![0.0; c.len()];
    let (a, b) = (*rows.start(), *rows.end());
    out[a * nx..(b + 1) * nx]
        .par_iter_mut()
        .zip(&c[a * nx..(b + 1) * nx])
        .try_for_each(|(o, &z)| {
            *o = f(z)?;
            Ok(())
        })
        .map_err(|source| SolverError::Reaction { step, source })?;
    Ok(out)
}

/// Time stepper for the macro problem.
#[derive(Debug, Clone)]
pub struct MacroStepper<'a> {
    system: &'a MacroSystem,
    reactions: MacroReactions,
    pub time: TimeGrid,
    step: usize,
    state: Vec<f64>,
    pub stats: StepStats,
}

impl<'a> MacroStepper<'a> {
    pub fn new(system: &'a MacroSystem, scenario: &Scenario, time: TimeGrid) -> Result<Self, SolverError> {
        if (time.dt - system.operator.dt).abs() > 1e-15 * time.dt {
            return Err(SolverError::InvalidTimeStep(time.dt));
        }
        Ok(Self {
            system,
            reactions: MacroReactions::new(scenario),
            time,
            step: 0,
            state: system.initial_state(scenario)?,
            stats: StepStats::default(),
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn t(&self) -> f64 {
        self.time.time(self.step)
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.time.steps
    }

    /// Explicit load `M^+ F^+(c) + M^- F^-(c) + M_Sigma G(c)` at the current state.
    pub fn load(&self) -> Result<Vec<f64>, SolverError> {
        let sys = self.system;
        let grid = &sys.grid;
        let (t, k, c) = (self.t(), self.step + 1, &self.state);
        let top = grid.ny() - 1;
        let s = sys.sigma_row;
        let fp = eval_rows(grid, s..=top, c, |z| self.reactions.f_plus.eval(t, z), k)?;
        let fm = eval_rows(grid, 0..=s, c, |z| self.reactions.f_minus.eval(t, z), k)?;
        let g = eval_rows(grid, s..=s, c, |z| self.reactions.g.eval(t, z), k)?;
        let m = &sys.matrices;
        let mut load = m.mass_plus.mul_vec(&fp);
        for (l, (a, b)) in load.iter_mut().zip(m.mass_minus.mul_vec(&fm).into_iter().zip(m.mass_sigma.mul_vec(&g))) {
            *l += a + b;
        }
        Ok(load)
    }

    pub fn advance(&mut self) -> Result<(), SolverError> {
        let load = self.load()?;
        self.state = self.system.operator.step(self.step + 1, &self.state, &load, &mut self.stats)?;
        self.step += 1;
        Ok(())
    }
}

/// Second-order central difference in `x1` of every row, periodic.
pub fn tangential_derivative(grid: &StructuredGrid, c: &[f64]) -> Vec<f64> {
    let inv = 1.0 / (2.0 * grid.hx());
    let mut d = vec![0.0; c.len()];
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            d[grid.node(i, j)] = (c[grid.node(grid.right(i), j)] - c[grid.node(grid.left(i), j)]) * inv;
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacroSummary {
    pub per_unit: usize,
    pub nodes: usize,
    pub d_star: f64,
    pub dt: f64,
    pub steps: usize,
    pub initial_mass: f64,
    pub final_mass: f64,
    /// Largest relative change of `1^T M c` over a single step.
    pub max_step_mass_change: f64,
    pub solver: StepStats,
}

#[derive(Debug, Clone)]
pub struct MacroTrajectory {
    pub grid: StructuredGrid,
    pub sigma_row: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `d/dx1` of each snapshot state (all rows, so it covers `c^+-` and `c^M`).
    pub derivatives: Vec<Vec<f64>>,
    pub summary: MacroSummary,
}

impl MacroTrajectory {
    pub fn interface_values(&self, k: usize) -> &[f64] {
        let nx = self.grid.nx();
        &self.states[k][self.sigma_row * nx..(self.sigma_row + 1) * nx]
    }
}

pub fn solve_macro(
    scenario: &Scenario,
    d_star: &EffectiveTensor,
    per_unit: usize,
    dt: f64,
    snapshot_times: &[f64],
) -> Result<MacroTrajectory, SolverError> {
    let time = TimeGrid::new(scenario.t_final, dt)?;
    let snaps = time.snapshot_steps(snapshot_times)?;
    let system = MacroSystem::new(scenario, d_star, per_unit, time.dt)?;
    let mut stepper = MacroStepper::new(&system, scenario, time)?;
    let initial_mass = system.operator.total_mass(stepper.state());
    let mut prev_mass = initial_mass;
    let mut max_change: f64 = 0.0;
    let (mut times, mut states, mut derivatives) = (Vec::new(), Vec::new(), Vec::new());
    let mut record = |s: &MacroStepper| {
        times.push(s.t());
        derivatives.push(tangential_derivative(&system.grid, s.state()));
        states.push(s.state().to_vec());
    };
    let mut next = 0;
    loop {
        if next < snaps.len() && snaps[next] == stepper.step_index() {
            record(&stepper);
            next += 1;
        }
        if stepper.is_done() {
            break;
        }
        stepper.advance()?;
        let m = system.operator.total_mass(stepper.state());
        max_change = max_change.max((m - prev_mass).abs() / prev_mass.abs().max(f64::MIN_POSITIVE));
        prev_mass = m;
    }
    let summary = MacroSummary {
        per_unit,
        nodes: system.grid.node_count(),
        d_star: system.d_star,
        dt: time.dt,
        steps: time.steps,
        initial_mass,
        final_mass: prev_mass,
        max_step_mass_change: max_change,
        solver: stepper.stats.clone(),
    };
    Ok(MacroTrajectory { grid: system.grid.clone(), sigma_row: system.sigma_row, times, states, derivatives, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{max_abs, DenseMatrix};
    use crate::scenario::parse_unchecked;

    fn tensor(d: f64) -> EffectiveTensor {
        EffectiveTensor { d_star: vec![vec![d]], asymmetry: 0.0, min_eigenvalue: d }
    }

    fn scenario(body: &str) -> Scenario {
        parse_unchecked(&format!("[coefficients]\nD_M = \"1\"\n{body}")).unwrap()
    }

    /// Dense oracle: tensor product of 1D P1 masses, plus `|Z|` times the
    /// periodic line mass on the Sigma row.
    fn oracle_mass(grid: &StructuredGrid, sigma: usize) -> DenseMatrix {
        let (nx, ny, h) = (grid.nx(), grid.ny(), grid.hx());
        let mx = |a: usize, b: usize| -> f64 {
            // with two columns the right and left neighbours coincide
            let d = (a + nx - b) % nx;
            let diag = if a == b { 2.0 * h / 3.0 } else { 0.0 };
            diag + [1, nx - 1].iter().filter(|&&k| k == d).count() as f64 * h / 6.0
        };
        let my = |a: usize, b: usize| -> f64 {
            let interior = a > 0 && a < ny - 1;
            if a == b {
                if interior {
                    2.0 * h / 3.0
                } else {
                    h / 3.0
                }
            } else if a.abs_diff(b) == 1 {
                h / 6.0
            } else {
                0.0
            }
        };
        DenseMatrix::from_fn(grid.node_count(), grid.node_count(), |p, q| {
            let (ip, jp, iq, jq) = (p % nx, p / nx, q % nx, q / nx);
            let line = if jp == sigma && jq == sigma { CELL_MEASURE * mx(ip, iq) } else { 0.0 };
            mx(ip, iq) * my(jp, jq) + line
        })
    }

    #[test]
    fn mass_matches_hand_assembly() {
        let grid = build_macro_grid(1, 1, 2).unwrap();
        let m = assemble_macro(&grid, SymTensor2::IDENTITY, SymTensor2::IDENTITY, 1.3).unwrap();
        let dense = m.mass.to_dense();
        let oracle = oracle_mass(&grid, 2);
        for p in 0..grid.node_count() {
            for q in 0..grid.node_count() {
                assert!((dense[(p, q)] - oracle[(p, q)]).abs() < 1e-15, "({p}, {q})");
            }
        }
        // Sigma diagonal: four bulk elements of area 1/4 and |Z| * 2h/3
        assert!((dense[(4, 4)] - (4.0 * 0.25 / 9.0 + 2.0 / 3.0)).abs() < 1e-15);
        let total: f64 = m.mass.values().iter().sum();
        assert!((total - (2.0 + CELL_MEASURE)).abs() < 1e-14);
    }

    #[test]
    fn zero_effective_tensor_removes_interface_stiffness() {
        let grid = build_macro_grid(1, 1, 4).unwrap();
        let with = assemble_macro(&grid, SymTensor2::IDENTITY, SymTensor2::IDENTITY, 0.0).unwrap();
        let mut t = Vec::new();
        fem::assemble_stiffness(&grid, 0..grid.ny() - 1, 1.0, |_, _, _| SymTensor2::IDENTITY, &mut t);
        let bulk = CsrMatrix::from_triplets(grid.node_count(), grid.node_count(), &t).unwrap();
        let diff = CsrMatrix::linear_combination(1.0, &with.stiffness, -1.0, &bulk).unwrap();
        assert!(max_abs(diff.values()) < 1e-14);
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let grid = build_macro_grid(2, 1, 4).unwrap();
        let m = assemble_macro(&grid, SymTensor2::new(2.0, 0.3, 1.0), SymTensor2::IDENTITY, 1.7).unwrap();
        assert!(max_abs(&m.stiffness.mul_vec(&vec![1.0; grid.node_count()])) < 1e-12);
        assert!(m.stiffness.asymmetry() < 1e-14);
    }

    #[test]
    fn constants_are_steady() {
        let s = scenario("[initial]\ninit_plus = \"1\"\ninit_minus = \"1\"\ninit_M = \"1\"\n");
        let sys = MacroSystem::new(&s, &tensor(1.0), 4, 0.01).unwrap();
        let mut st = MacroStepper::new(&sys, &s, TimeGrid::new(0.25, 0.01).unwrap()).unwrap();
        st.advance().unwrap();
        assert!(st.state().iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn linear_growth_single_step() {
        let s = scenario(
            "[reactions]\nf_plus = \"z\"\nf_minus = \"z\"\ng_M = \"z\"\n[initial]\ninit_plus = \"1\"\ninit_minus = \"1\"\ninit_M = \"1\"\n",
        );
        let sys = MacroSystem::new(&s, &tensor(1.0), 4, 0.01).unwrap();
        let mut st = MacroStepper::new(&sys, &s, TimeGrid::new(0.25, 0.01).unwrap()).unwrap();
        st.advance().unwrap();
        assert!(st.state().iter().all(|v| (v - 1.01).abs() <= 1e-9), "{:?}", &st.state()[..4]);
    }

    #[test]
    fn zero_step_is_rejected() {
        let s = scenario("");
        assert!(matches!(MacroSystem::new(&s, &tensor(1.0), 4, 0.0), Err(SolverError::InvalidTimeStep(_))));
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let s = scenario("");
        let tr = solve_macro(&s, &tensor(1.0), 4, 0.05, &[0.0, 0.1, 0.25]).unwrap();
        assert_eq!(tr.states.len(), 3);
        assert!(tr.states.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn mass_is_conserved_without_reactions() {
        let s = scenario(
            "D_plus = [[2, 0.5], [0.5, 1]]\n[initial]\ninit_plus = \"1 + cos(2*pi*x1)*x2\"\ninit_minus = \"1 - x2^2\"\ninit_M = \"1\"\n",
        );
        let tr = solve_macro(&s, &tensor(1.4), 8, 0.01, &[0.0, 0.25]).unwrap();
        assert!(tr.summary.max_step_mass_change <= 1e-12, "{}", tr.summary.max_step_mass_change);
        assert!((tr.summary.final_mass - tr.summary.initial_mass).abs() <= 1e-12 * tr.summary.initial_mass);
    }

    #[test]
    fn diffusion_does_not_increase_the_maximum() {
        // M-matrix regime: dt >= h^2 / 3 on the Q1 grid
        let s = scenario(
            "[initial]\ninit_plus = \"exp(-20*((x1-0.5)^2 + (x2-0.3)^2))\"\ninit_minus = \"0\"\ninit_M = \"0\"\n",
        );
        let tr = solve_macro(&s, &tensor(1.0), 8, 0.01, &TimeGrid::new(0.25, 0.01).unwrap().even_snapshots(26)).unwrap();
        let sup: Vec<f64> = tr.states.iter().map(|c| max_abs(c)).collect();
        for w in sup.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{sup:?}");
        }
    }

    #[test]
    fn interface_is_shared() {
        let s = scenario("[initial]\ninit_plus = \"cos(2*pi*x1)*(1+x2)\"\ninit_minus = \"cos(2*pi*x1)\"\ninit_M = \"cos(2*pi*x1)\"\n");
        let tr = solve_macro(&s, &tensor(1.0), 4, 0.05, &[0.0, 0.25]).unwrap();
        let sig = tr.interface_values(0);
        for (i, v) in sig.iter().enumerate() {
            assert!((v - (2.0 * std::f64::consts::PI * tr.grid.x(i)).cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn tangential_derivative_of_cosine() {
        let grid = build_macro_grid(1, 1, 64).unwrap();
        let c: Vec<f64> = (0..grid.node_count()).map(|n| (2.0 * std::f64::consts::PI * grid.x(n % grid.nx())).sin()).collect();
        let d = tangential_derivative(&grid, &c);
        for n in 0..grid.node_count() {
            let exact = 2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * grid.x(n % grid.nx())).cos();
            assert!((d[n] - exact).abs() < 0.015);
        }
    }

    #[test]
    fn first_order_in_time() {
        let s = scenario(
            "[reactions]\nf_plus = \"0.5*z/(1+z^2)\"\nf_minus = \"-z\"\ng_M = \"-z + sin(2*pi*y1) + 1\"\n[initial]\ninit_plus = \"1 + 0.5*cos(2*pi*x1)*cos(pi*x2)\"\ninit_minus = \"1 + 0.5*cos(2*pi*x1)*cos(pi*x2)\"\ninit_M = \"1 + 0.5*cos(2*pi*x1)\"\n[time]\nT = 0.2\n",
        );
        let finals: Vec<Vec<f64>> = [0.02, 0.01, 0.005]
            .iter()
            .map(|&dt| solve_macro(&s, &tensor(1.5), 8, dt, &[0.0, 0.2]).unwrap().states.pop().unwrap())
            .collect();
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let order = (diff(&finals[0], &finals[1]) / diff(&finals[1], &finals[2])).log2();
        assert!(order >= 0.8, "temporal order {order}");
    }
}
