//! Composite error norms, epsilon sweeps and convergence-rate fits.

use crate::cell_solver::{solve_auxiliary_problems, AuxiliarySolutions, CellError, SampledCoefficient};
use crate::correctors::{ApproximationBuilder, ApproximationField, CorrectorError, MacroSnapshot, Order};
use crate::fem;
use crate::geometry::StructuredGrid;
use crate::macro_solver::{tangential_derivative, MacroStepper, MacroSummary, MacroSystem};
use crate::micro_solver::{MicroStepper, MicroSystem, ShiftedFields};
use crate::numerics::max_abs;
use crate::scenario::{print_scenario, Scenario};
use crate::timestep::{default_dt, SolverError, StepStats, TimeGrid};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::time::Instant;
use thiserror::Error;

/// A halving of epsilon that reduces a composite by less than this fraction
/// marks the finer point as discretization-limited.
pub const MIN_REDUCTION: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Corrector(#[from] CorrectorError),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("rate fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid study: {0}")]
    InvalidStudy(String),
}

/// `(||u - v||_{L2}, |u - v|_{H1})` over all elements of `grid`.
pub fn h1_error(grid: &StructuredGrid, u: &[f64], v: &[f64]) -> Result<(f64, f64), HarnessError> {
    if u.len() != grid.node_count() || v.len() != grid.node_count() {
        return Err(HarnessError::GridMismatch(format!(
            "fields of length {} and {} on a grid of {} nodes",
            u.len(),
            v.len(),
            grid.node_count()
        )));
    }
    let diff: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    let (l2, semi) = fem::l2_h1_squared(grid, &diff);
    Ok((l2.max(0.0).sqrt(), semi.max(0.0).sqrt()))
}

/// Quadrature of the squared spatial norms over `(0, T)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub enum TimeRule {
    #[default]
    Trapezoid,
    /// `dt * sum_{k >= 1} e_k^2`: the norm controlled by the implicit Euler
    /// energy estimate; the level `t = 0` carries no weight.
    RightEndpoint,
}

/// `L2(0, T)` norm of spatial norms sampled every `dt`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpaceTimeNorm {
    dt: f64,
    rule: TimeRule,
    sum: f64,
    last: Option<f64>,
}

impl SpaceTimeNorm {
    pub fn new(dt: f64) -> Self {
        Self::with_rule(dt, TimeRule::Trapezoid)
    }

    pub fn with_rule(dt: f64, rule: TimeRule) -> Self {
        Self { dt, rule, sum: 0.0, last: None }
    }

    /// Adds the spatial norm at the next time level.
    pub fn push(&mut self, e: f64) {
        let sq = e * e;
        if let Some(prev) = self.last {
            self.sum += match self.rule {
                TimeRule::Trapezoid => 0.5 * self.dt * (prev + sq),
                TimeRule::RightEndpoint => self.dt * sq,
            };
        }
        self.last = Some(sq);
    }

    pub fn value(&self) -> f64 {
        self.sum.sqrt()
    }
}

pub fn spacetime_accumulate(errors: &[f64], dt: f64) -> f64 {
    let mut n = SpaceTimeNorm::new(dt);
    errors.iter().for_each(|&e| n.push(e));
    n.value()
}

/// Error components of one approximation order.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OrderErrors {
    /// `||c - c_app||_{L2((0,T), H1(Omega^+))}` after the shift to the fixed domain.
    pub bulk_plus: f64,
    pub bulk_minus: f64,
    /// `||c - c_app||_{L2((0,T), H1(Omega_eps^M))}`.
    pub layer: f64,
    /// `bulk_plus + bulk_minus + eps^{-1/2} layer`.
    pub composite: f64,
    /// `max_t ||c - c_app||_{L2}` over both bulk domains.
    pub linf_l2_bulk: f64,
    /// `max_t eps^{-1/2} ||c - c_app||_{L2(Omega_eps^M)}`.
    pub linf_l2_layer_scaled: f64,
    /// Largest interface jump of the approximation.
    pub max_jump: f64,
}

/// Running accumulation of [`OrderErrors`] over the time levels.
#[derive(Debug, Clone)]
pub struct ErrorAccumulator {
    epsilon: f64,
    plus: SpaceTimeNorm,
    minus: SpaceTimeNorm,
    layer: SpaceTimeNorm,
    linf_bulk: f64,
    linf_layer: f64,
    max_jump: f64,
}

impl ErrorAccumulator {
    pub fn new(epsilon: f64, dt: f64, rule: TimeRule) -> Self {
        Self {
            epsilon,
            plus: SpaceTimeNorm::with_rule(dt, rule),
            minus: SpaceTimeNorm::with_rule(dt, rule),
            layer: SpaceTimeNorm::with_rule(dt, rule),
            linf_bulk: 0.0,
            linf_layer: 0.0,
            max_jump: 0.0,
        }
    }

    pub fn push(&mut self, micro: &ShiftedFields, approx: &ApproximationField) -> Result<(), HarnessError> {
        let a = &approx.fields;
        let (pl, ps) = h1_error(&micro.plus_grid, &micro.plus, &a.plus)?;
        let (ml, ms) = h1_error(&micro.minus_grid, &micro.minus, &a.minus)?;
        let (ll, ls) = h1_error(&micro.layer_grid, &micro.layer, &a.layer)?;
        self.plus.push(pl.hypot(ps));
        self.minus.push(ml.hypot(ms));
        self.layer.push(ll.hypot(ls));
        self.linf_bulk = self.linf_bulk.max(pl.hypot(ml));
        self.linf_layer = self.linf_layer.max(ll / self.epsilon.sqrt());
        self.max_jump = self.max_jump.max(approx.jump_plus).max(approx.jump_minus);
        Ok(())
    }

    pub fn finish(&self) -> OrderErrors {
        let (p, m, l) = (self.plus.value(), self.minus.value(), self.layer.value());
        OrderErrors {
            bulk_plus: p,
            bulk_minus: m,
            layer: l,
            composite: p + m + l / self.epsilon.sqrt(),
            linf_l2_bulk: self.linf_bulk,
            linf_l2_layer_scaled: self.linf_layer,
            max_jump: self.max_jump,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub epsilon: f64,
    pub first: OrderErrors,
    pub second: Option<OrderErrors>,
}

/// Composite norms from micro states and approximations sampled at the same
/// uniformly spaced time levels.
pub fn composite_norms(
    micro: &[ShiftedFields],
    first: &[ApproximationField],
    second: Option<&[ApproximationField]>,
    epsilon: f64,
    dt: f64,
    rule: TimeRule,
) -> Result<ErrorReport, HarnessError> {
    let run = |approx: &[ApproximationField]| -> Result<OrderErrors, HarnessError> {
        if approx.len() != micro.len() || micro.is_empty() {
            return Err(HarnessError::InvalidStudy(format!(
                "{} micro snapshots against {} approximations",
                micro.len(),
                approx.len()
            )));
        }
        let mut acc = ErrorAccumulator::new(epsilon, dt, rule);
        for (m, a) in micro.iter().zip(approx) {
            acc.push(m, a)?;
        }
        Ok(acc.finish())
    };
    Ok(ErrorReport { epsilon, first: run(first)?, second: second.map(run).transpose()? })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    /// Least-squares slope of `log(error)` against `log(eps)`; infinite when all errors vanish.
    pub p: f64,
    /// Root mean square of the log-space residuals.
    pub residual: f64,
}

pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit, HarnessError> {
    if points.len() < 3 {
        return Err(HarnessError::TooFewPoints(points.len()));
    }
    if points.iter().all(|&(_, e)| e == 0.0) {
        return Ok(RateFit { p: f64::INFINITY, residual: 0.0 });
    }
    if points.iter().any(|&(eps, e)| !(eps > 0.0 && e > 0.0)) {
        return Err(HarnessError::InvalidStudy("rate fit needs positive epsilons and errors".into()));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let p = sxy / sxx;
    let ss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - my - p * (x - mx)).powi(2)).sum();
    Ok(RateFit { p, residual: (ss / n).sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSummary {
    pub fit: Option<RateFit>,
    pub error: Option<String>,
    /// `1/eps` of the points entering the fit.
    pub used: Vec<u32>,
    /// `1/eps` of points excluded because the composite stopped decreasing.
    pub discretization_limited: Vec<u32>,
}

impl RateSummary {
    pub fn p(&self) -> Option<f64> {
        self.fit.map(|f| f.p)
    }
}

/// Fits a rate over `(1/eps, error)` points ordered from coarse to fine,
/// dropping points whose error fell by less than [`MIN_REDUCTION`] relative
/// to the previous kept point.
pub fn summarize_rate(points: &[(u32, f64)]) -> RateSummary {
    let mut used: Vec<(u32, f64)> = Vec::new();
    let mut limited = Vec::new();
    for &(inv, e) in points {
        match used.last() {
            Some(&(_, prev)) if e > (1.0 - MIN_REDUCTION) * prev => limited.push(inv),
            _ => used.push((inv, e)),
        }
    }
    let pts: Vec<(f64, f64)> = used.iter().map(|&(inv, e)| (1.0 / inv as f64, e)).collect();
    let (fit, error) = match fit_rate(&pts) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    RateSummary { fit, error, used: used.iter().map(|p| p.0).collect(), discretization_limited: limited }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOptions {
    pub inv_epsilons: Vec<u32>,
    pub resolution: usize,
    pub stripe_length: usize,
    /// Shared time step; `None` uses [`default_dt`] of the smallest epsilon.
    pub dt: Option<f64>,
    pub time_rule: TimeRule,
}

impl StudyOptions {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            inv_epsilons: s.study.inv_epsilons.clone(),
            resolution: s.study.resolution,
            stripe_length: s.study.stripe_length,
            dt: s.dt,
            time_rule: TimeRule::RightEndpoint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyPoint {
    pub inv_epsilon: u32,
    pub epsilon: f64,
    pub report: Option<ErrorReport>,
    pub failure: Option<String>,
    /// `max_t ||c_eps||_{L2}` over the bulk and `max_t eps^{-1/2} ||c_eps^M||_{L2}`.
    pub a_priori_bulk: f64,
    pub a_priori_layer: f64,
    pub micro_nodes: usize,
    pub solver: StepStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuxiliarySummary {
    pub d_star: f64,
    pub omega_plus: f64,
    pub omega_minus: f64,
    pub slab_ratio_plus: f64,
    pub slab_ratio_minus: f64,
    pub compatibility_defect: f64,
    pub diagnostics: Vec<String>,
}

impl AuxiliarySummary {
    pub fn new(aux: &AuxiliarySolutions) -> Self {
        Self {
            d_star: aux.tensor.d11(),
            omega_plus: aux.layer_plus.decay.omega,
            omega_minus: aux.layer_minus.decay.omega,
            slab_ratio_plus: aux.layer_plus.decay.ratio,
            slab_ratio_minus: aux.layer_minus.decay.ratio,
            compatibility_defect: aux.second.compatibility_defect,
            diagnostics: aux.diagnostics(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRuntime {
    pub auxiliary_seconds: f64,
    pub time_stepping_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    /// SHA-256 of the canonical scenario text.
    pub scenario_digest: String,
    pub resolution: usize,
    pub stripe_length: usize,
    pub time: TimeGrid,
    pub macro_per_unit: usize,
    pub auxiliary: AuxiliarySummary,
    pub macro_summary: MacroSummary,
    /// `max_t max |d1 c_0|` on the macro grid.
    pub max_tangential_derivative: f64,
    pub points: Vec<StudyPoint>,
    pub rate_first: RateSummary,
    pub rate_second: RateSummary,
    pub runtime: StudyRuntime,
}

impl StudyReport {
    pub fn point(&self, inv_epsilon: u32) -> Option<&StudyPoint> {
        self.points.iter().find(|p| p.inv_epsilon == inv_epsilon)
    }

    /// Errors per epsilon; wall-clock data is left out so that identical
    /// runs give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "inv_epsilon,epsilon,bulk_plus_1,bulk_minus_1,layer_1,composite_1,bulk_plus_2,bulk_minus_2,layer_2,composite_2,jump_1,jump_2,status\n",
        );
        for p in &self.points {
            let _ = write!(out, "{},{:.16e}", p.inv_epsilon, p.epsilon);
            match &p.report {
                Some(r) => {
                    let s = r.second.clone().unwrap_or_default();
                    for v in [
                        r.first.bulk_plus,
                        r.first.bulk_minus,
                        r.first.layer,
                        r.first.composite,
                        s.bulk_plus,
                        s.bulk_minus,
                        s.layer,
                        s.composite,
                        r.first.max_jump,
                        s.max_jump,
                    ] {
                        let _ = write!(out, ",{v:.16e}");
                    }
                    out.push_str(",ok\n");
                }
                None => {
                    out.push_str(&",NaN".repeat(10));
                    out.push_str(",failed\n");
                }
            }
        }
        out
    }
}

pub fn scenario_digest(s: &Scenario) -> String {
    hex::encode(Sha256::digest(print_scenario(s).as_bytes()))
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

struct Worker<'a> {
    system: &'a MicroSystem,
    stepper: MicroStepper<'a>,
    builder: ApproximationBuilder,
    first: ErrorAccumulator,
    second: ErrorAccumulator,
    a_priori: (f64, f64),
}

impl Worker<'_> {
    /// Accumulates the errors of the current time level against `snap`.
    fn observe(&mut self, snap: MacroSnapshot) -> Result<(), HarnessError> {
        let micro = self.system.shift_to_fixed_domains(self.stepper.state())?;
        let a1 = self.builder.build(Order::First, snap)?;
        self.first.push(&micro, &a1)?;
        let a2 = self.builder.build(Order::Second, snap)?;
        self.second.push(&micro, &a2)?;
        let (b, l) = self.system.a_priori_norms(self.stepper.state());
        self.a_priori = (self.a_priori.0.max(b), self.a_priori.1.max(l));
        Ok(())
    }
}

/// Runs the macro problem and every micro problem in lockstep, accumulating
/// the composite errors of both approximation orders at every time level.
pub fn run_study(scenario: &Scenario, options: &StudyOptions) -> Result<StudyReport, HarnessError> {
    let mut invs = options.inv_epsilons.clone();
    invs.sort_unstable();
    invs.dedup();
    if invs.is_empty() {
        return Err(HarnessError::InvalidStudy("no epsilon values".into()));
    }
    let n = options.resolution;
    let start = Instant::now();
    let coef = SampledCoefficient::from_layer(&scenario.d_m, n)?;
    let aux = solve_auxiliary_problems(
        coef.clone(),
        scenario.d_plus_tensor(),
        scenario.d_minus_tensor(),
        options.stripe_length,
    )?;
    let auxiliary_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let finest = *invs.last().unwrap();
    let dt = options.dt.unwrap_or_else(|| default_dt(1.0 / finest as f64));
    let time = TimeGrid::new(scenario.t_final, dt)?;
    let lcm = invs.iter().fold(1usize, |l, &i| l / gcd(l, i as usize) * i as usize);
    let macro_per_unit = lcm * n;
    let macro_system = MacroSystem::new(scenario, &aux.tensor, macro_per_unit, time.dt)?;
    let mut macro_stepper = MacroStepper::new(&macro_system, scenario, time)?;

    let systems: Vec<Result<MicroSystem, HarnessError>> = invs
        .par_iter()
        .map(|&inv| Ok(MicroSystem::with_coefficient(scenario, inv, &coef, time.dt)?))
        .collect();
    let mut failures: Vec<Option<String>> = systems.iter().map(|s| s.as_ref().err().map(|e| e.to_string())).collect();
    let mut workers: Vec<Option<Worker>> = systems
        .iter()
        .zip(failures.iter_mut())
        .map(|(sys, failure)| {
            let sys = sys.as_ref().ok()?;
            let built = (|| -> Result<Worker, HarnessError> {
                Ok(Worker {
                    system: sys,
                    stepper: MicroStepper::new(sys, scenario, time)?,
                    builder: ApproximationBuilder::new(sys, &aux, &macro_system.grid)?,
                    first: ErrorAccumulator::new(sys.epsilon(), time.dt, options.time_rule),
                    second: ErrorAccumulator::new(sys.epsilon(), time.dt, options.time_rule),
                    a_priori: (0.0, 0.0),
                })
            })();
            built.map_err(|e| *failure = Some(e.to_string())).ok()
        })
        .collect();

    let mut max_derivative: f64 = 0.0;
    loop {
        let derivative = tangential_derivative(&macro_system.grid, macro_stepper.state());
        max_derivative = max_derivative.max(max_abs(&derivative));
        let snap = MacroSnapshot { t: macro_stepper.t(), values: macro_stepper.state(), derivative: &derivative };
        let done = macro_stepper.is_done();
        let outcomes: Vec<Option<String>> = workers
            .par_iter_mut()
            .map(|slot| {
                let w = slot.as_mut()?;
                let r = w.observe(snap).and_then(|_| if done { Ok(()) } else { Ok(w.stepper.advance()?) });
                r.err().map(|e| e.to_string())
            })
            .collect();
        for (k, o) in outcomes.into_iter().enumerate() {
            if let Some(msg) = o {
                failures[k] = Some(msg);
                workers[k] = None;
            }
        }
        if done {
            break;
        }
        macro_stepper.advance()?;
    }

    let mut points = Vec::with_capacity(invs.len());
    for (k, &inv) in invs.iter().enumerate() {
        let eps = 1.0 / inv as f64;
        let (report, a_priori, nodes, solver) = match &workers[k] {
            Some(w) => (
                Some(ErrorReport { epsilon: eps, first: w.first.finish(), second: Some(w.second.finish()) }),
                w.a_priori,
                w.system.grid.node_count(),
                w.stepper.stats.clone(),
            ),
            None => (None, (f64::NAN, f64::NAN), 0, StepStats::default()),
        };
        points.push(StudyPoint {
            inv_epsilon: inv,
            epsilon: eps,
            report,
            failure: failures[k].clone(),
            a_priori_bulk: a_priori.0,
            a_priori_layer: a_priori.1,
            micro_nodes: nodes,
            solver,
        });
    }
    let series = |f: fn(&ErrorReport) -> f64| -> Vec<(u32, f64)> {
        points.iter().filter_map(|p| p.report.as_ref().map(|r| (p.inv_epsilon, f(r)))).collect()
    };
    let rate_first = summarize_rate(&series(|r| r.first.composite));
    let rate_second = summarize_rate(&series(|r| r.second.as_ref().map_or(f64::NAN, |s| s.composite)));

    let initial_mass = macro_system.operator.total_mass(&macro_system.initial_state(scenario)?);
    let final_mass = macro_system.operator.total_mass(macro_stepper.state());
    let macro_summary = MacroSummary {
        per_unit: macro_per_unit,
        nodes: macro_system.grid.node_count(),
        d_star: macro_system.d_star,
        dt: time.dt,
        steps: time.steps,
        initial_mass,
        final_mass,
        max_step_mass_change: f64::NAN,
        solver: macro_stepper.stats.clone(),
    };
    Ok(StudyReport {
        scenario_digest: scenario_digest(scenario),
        resolution: n,
        stripe_length: options.stripe_length,
        time,
        macro_per_unit,
        auxiliary: AuxiliarySummary::new(&aux),
        macro_summary,
        max_tangential_derivative: max_derivative,
        points,
        rate_first,
        rate_second,
        runtime: StudyRuntime { auxiliary_seconds, time_stepping_seconds: start.elapsed().as_secs_f64() },
    })
}
