//! The microscopic problem on `Omega_eps`: bulk diffusion `D^+-`, a layer of
//! thickness `2 eps` with diffusion `D^M(x/eps) / eps`, mass `1/eps` and
//! reaction `g(x/eps) / eps`.
//!
//! The grid is conforming across `S_eps^+-`, so continuity of the
//! concentration is built in and the flux condition is the natural interface
//! condition of the weak form.

use crate::cell_solver::SampledCoefficient;
use crate::fem;
use crate::geometry::{build_micro_grid, LayerGeometry, Marker, Region, StructuredGrid};
use crate::numerics::{CsrMatrix, SymTensor2};
use crate::scenario::{Bindings, EvalError, Expr, Scenario, Var};
use crate::timestep::{ImexOperator, SolverError, StepStats, TimeGrid};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct MicroMatrices {
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    pub mass_plus: CsrMatrix,
    pub mass_minus: CsrMatrix,
    /// Layer mass, already carrying the factor `1/eps`.
    pub mass_layer: CsrMatrix,
}

/// Node rows of the interfaces `S_eps^-` and `S_eps^+`.
fn interface_rows(grid: &StructuredGrid) -> Result<(usize, usize), SolverError> {
    Ok((grid.require_marker(Marker::InterfaceMinus)?, grid.require_marker(Marker::InterfacePlus)?))
}

pub fn assemble_micro(
    geom: &LayerGeometry,
    grid: &StructuredGrid,
    d_plus: SymTensor2,
    d_minus: SymTensor2,
    coef: &SampledCoefficient,
) -> Result<MicroMatrices, SolverError> {
    let (lo, hi) = interface_rows(grid)?;
    let n = coef.resolution();
    let per_unit = geom.inv_epsilon as usize * n;
    if grid.per_unit() != per_unit || hi - lo != 2 * n || grid.region_intervals(Region::Layer) != Some(lo..hi) {
        return Err(SolverError::GridMismatch(format!(
            "micro grid does not resolve eps = 1/{} with {n} intervals per period",
            geom.inv_epsilon
        )));
    }
    let inv_eps = geom.inv_epsilon as f64;
    let nn = grid.node_count();
    let top = grid.ny() - 1;

    let mut tp = Vec::new();
    fem::assemble_mass(grid, hi..top, 1.0, &mut tp);
    let mut tm = Vec::new();
    fem::assemble_mass(grid, 0..lo, 1.0, &mut tm);
    let mut tl = Vec::new();
    fem::assemble_mass(grid, lo..hi, inv_eps, &mut tl);
    let mut mass_t = Vec::with_capacity(tp.len() + tm.len() + tl.len());
    mass_t.extend_from_slice(&tp);
    mass_t.extend_from_slice(&tm);
    mass_t.extend_from_slice(&tl);

    let mut stiff_t = Vec::new();
    fem::assemble_stiffness(grid, hi..top, 1.0, |_, _, _| d_plus, &mut stiff_t);
    fem::assemble_stiffness(grid, 0..lo, 1.0, |_, _, _| d_minus, &mut stiff_t);
    // element (i, j) of the layer is element (i mod N, j - lo) of the cell
    fem::assemble_stiffness(grid, lo..hi, inv_eps, |i, j, q| coef.at(i % n, j - lo, q), &mut stiff_t);

    let build = |t: &fem::Triplets| CsrMatrix::from_triplets(nn, nn, t);
    Ok(MicroMatrices {
        mass: build(&mass_t)?,
        stiffness: build(&stiff_t)?,
        mass_plus: build(&tp)?,
        mass_minus: build(&tm)?,
        mass_layer: build(&tl)?,
    })
}

/// Bulk and layer fields relabelled onto the fixed domains: `Omega^+` and
/// `Omega^-` are obtained by shifting the bulk parts by `-+eps` in `x2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedFields {
    pub plus_grid: StructuredGrid,
    pub plus: Vec<f64>,
    pub minus_grid: StructuredGrid,
    pub minus: Vec<f64>,
    pub layer_grid: StructuredGrid,
    pub layer: Vec<f64>,
}

/// Assembled micro problem for one `eps`, resolution and step.
#[derive(Debug, Clone)]
pub struct MicroSystem {
    pub geometry: LayerGeometry,
    pub resolution: usize,
    pub grid: StructuredGrid,
    /// Rows of `S_eps^-` and `S_eps^+`.
    pub interface_minus: usize,
    pub interface_plus: usize,
    pub matrices: MicroMatrices,
    pub operator: ImexOperator,
    half: usize,
}

impl MicroSystem {
    pub fn new(scenario: &Scenario, inv_epsilon: u32, resolution: usize, dt: f64) -> Result<Self, SolverError> {
        let coef = SampledCoefficient::from_layer(&scenario.d_m, resolution)
            .map_err(|e| SolverError::Coefficient(e.to_string()))?;
        Self::with_coefficient(scenario, inv_epsilon, &coef, dt)
    }

    /// Reuses a coefficient already sampled on the cell grid.
    pub fn with_coefficient(
        scenario: &Scenario,
        inv_epsilon: u32,
        coef: &SampledCoefficient,
        dt: f64,
    ) -> Result<Self, SolverError> {
        let geometry = scenario.geometry.with_inv_epsilon(inv_epsilon)?;
        let resolution = coef.resolution();
        let grid = build_micro_grid(&geometry, resolution)?;
        let matrices = assemble_micro(&geometry, &grid, scenario.d_plus_tensor(), scenario.d_minus_tensor(), coef)?;
        let operator = ImexOperator::new(matrices.mass.clone(), matrices.stiffness.clone(), dt)?;
        let (interface_minus, interface_plus) = interface_rows(&grid)?;
        let half = (grid.ny() - 1) / 2;
        Ok(Self { geometry, resolution, grid, interface_minus, interface_plus, matrices, operator, half })
    }

    pub fn epsilon(&self) -> f64 {
        self.geometry.epsilon()
    }

    /// Cell coordinates `y = x / eps` of node `(i, j)`, wrapped exactly into
    /// `[0, 1)` tangentially; `y2` is wrapped into `[0, 1)` in the bulk and
    /// kept in `[-1, 1]` in the layer.
    pub fn cell_coordinates(&self, i: usize, j: usize) -> (f64, f64) {
        let n = self.resolution as i64;
        let y1 = (i as i64 % n) as f64 / n as f64;
        let k = j as i64 - self.half as i64;
        let y2 = if j >= self.interface_minus && j <= self.interface_plus {
            k as f64 / n as f64
        } else {
            k.rem_euclid(n) as f64 / n as f64
        };
        (y1, y2)
    }

    /// Initial data: bulk initializers at `(x1, x2 -+ eps)`, including the
    /// interface rows; the layer initializer in the layer interior.
    pub fn initial_state(&self, scenario: &Scenario) -> Result<Vec<f64>, SolverError> {
        let g = &self.grid;
        let eps = self.epsilon();
        let mut c = vec![0.0; g.node_count()];
        for j in 0..g.ny() {
            let (expr, x2) = if j >= self.interface_plus {
                (&scenario.init_plus, g.ys()[j] - eps)
            } else if j <= self.interface_minus {
                (&scenario.init_minus, g.ys()[j] + eps)
            } else {
                (&scenario.init_m, 0.0)
            };
            for i in 0..g.nx() {
                let b = Bindings::new().with(Var::X1, g.x(i)).with(Var::X2, x2);
                c[g.node(i, j)] = expr.eval(&b).map_err(|source| SolverError::Reaction { step: 0, source })?;
            }
        }
        Ok(c)
    }

    fn check_len(&self, c: &[f64]) -> Result<(), SolverError> {
        if c.len() != self.grid.node_count() {
            return Err(SolverError::GridMismatch(format!(
                "state has {} values, micro grid has {} nodes",
                c.len(),
                self.grid.node_count()
            )));
        }
        Ok(())
    }

    /// Node-exact relabelling of a state onto `Omega^+`, `Omega^-` and the layer.
    pub fn shift_to_fixed_domains(&self, c: &[f64]) -> Result<ShiftedFields, SolverError> {
        self.check_len(c)?;
        let g = &self.grid;
        let (nx, top, eps) = (g.nx(), g.ny() - 1, self.epsilon());
        let (lo, hi) = (self.interface_minus, self.interface_plus);
        Ok(ShiftedFields {
            plus_grid: g.row_slice(hi..=top, -eps),
            plus: c[hi * nx..].to_vec(),
            minus_grid: g.row_slice(0..=lo, eps),
            minus: c[..(lo + 1) * nx].to_vec(),
            layer_grid: g.row_slice(lo..=hi, 0.0),
            layer: c[lo * nx..(hi + 1) * nx].to_vec(),
        })
    }

    /// Inverse of [`Self::shift_to_fixed_domains`]; interface values are taken from the layer.
    pub fn unshift(&self, f: &ShiftedFields) -> Result<Vec<f64>, SolverError> {
        let g = &self.grid;
        let (nx, top) = (g.nx(), g.ny() - 1);
        let (lo, hi) = (self.interface_minus, self.interface_plus);
        if f.plus.len() != (top - hi + 1) * nx || f.minus.len() != (lo + 1) * nx || f.layer.len() != (hi - lo + 1) * nx {
            return Err(SolverError::GridMismatch("shifted fields do not match the micro grid".into()));
        }
        let mut c = vec![0.0; g.node_count()];
        c[hi * nx..].copy_from_slice(&f.plus);
        c[..(lo + 1) * nx].copy_from_slice(&f.minus);
        c[lo * nx..(hi + 1) * nx].copy_from_slice(&f.layer);
        Ok(c)
    }

    /// `||c||_{L2(Omega_eps^+-)}` and `eps^{-1/2} ||c||_{L2(Omega_eps^M)}`.
    pub fn a_priori_norms(&self, c: &[f64]) -> (f64, f64) {
        let m = &self.matrices;
        let q = |a: &CsrMatrix| crate::numerics::dot(c, &a.mul_vec(c)).max(0.0);
        ((q(&m.mass_plus) + q(&m.mass_minus)).sqrt(), q(&m.mass_layer).sqrt())
    }
}

/// Reaction evaluated nodewise with `y = x / eps`.
#[derive(Debug, Clone)]
struct NodalReaction {
    expr: Expr,
    /// `(node, y1, y2)` for every node in the reaction's rows.
    points: Vec<(usize, f64, f64)>,
}

impl NodalReaction {
    fn new(sys: &MicroSystem, expr: &Expr, rows: std::ops::RangeInclusive<usize>) -> Self {
        let g = &sys.grid;
        let mut points = Vec::new();
        for j in rows {
            for i in 0..g.nx() {
                let (y1, y2) = sys.cell_coordinates(i, j);
                points.push((g.node(i, j), y1, y2));
            }
        }
        Self { expr: expr.clone(), points }
    }

    fn eval(&self, t: f64, c: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        out.iter_mut().for_each(|v| *v = 0.0);
        let vals: Vec<f64> = self
            .points
            .par_iter()
            .map(|&(node, y1, y2)| {
                let b = Bindings::new().with(Var::T, t).with(Var::Y1, y1).with(Var::Y2, y2).with(Var::Z, c[node]);
                self.expr.eval(&b)
            })
            .collect::<Result<_, _>>()?;
        for (&(node, _, _), v) in self.points.iter().zip(vals) {
            out[node] = v;
        }
        Ok(())
    }
}

/// Time stepper for the micro problem.
#[derive(Debug, Clone)]
pub struct MicroStepper<'a> {
    system: &'a MicroSystem,
    f_plus: NodalReaction,
    f_minus: NodalReaction,
    g: NodalReaction,
    pub time: TimeGrid,
    step: usize,
    state: Vec<f64>,
    pub stats: StepStats,
}

impl<'a> MicroStepper<'a> {
    pub fn new(system: &'a MicroSystem, scenario: &Scenario, time: TimeGrid) -> Result<Self, SolverError> {
        if (time.dt - system.operator.dt).abs() > 1e-15 * time.dt {
            return Err(SolverError::InvalidTimeStep(time.dt));
        }
        let top = system.grid.ny() - 1;
        let (lo, hi) = (system.interface_minus, system.interface_plus);
        Ok(Self {
            f_plus: NodalReaction::new(system, &scenario.f_plus, hi..=top),
            f_minus: NodalReaction::new(system, &scenario.f_minus, 0..=lo),
            g: NodalReaction::new(system, &scenario.g_m, lo..=hi),
            system,
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

    /// Explicit load `M^+ f^+(c) + M^- f^-(c) + M^M g(c)` at the current state
    /// (the layer mass carries the factor `1/eps`).
    pub fn load(&self) -> Result<Vec<f64>, SolverError> {
        let (t, c) = (self.t(), &self.state);
        let wrap = |source| SolverError::Reaction { step: self.step + 1, source };
        let n = c.len();
        let m = &self.system.matrices;
        let mut buf = vec![0.0; n];
        self.f_plus.eval(t, c, &mut buf).map_err(wrap)?;
        let mut load = m.mass_plus.mul_vec(&buf);
        self.f_minus.eval(t, c, &mut buf).map_err(wrap)?;
        for (l, v) in load.iter_mut().zip(m.mass_minus.mul_vec(&buf)) {
            *l += v;
        }
        self.g.eval(t, c, &mut buf).map_err(wrap)?;
        for (l, v) in load.iter_mut().zip(m.mass_layer.mul_vec(&buf)) {
            *l += v;
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

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MicroSummary {
    pub epsilon: f64,
    pub per_period_resolution: usize,
    pub nodes: usize,
    pub dt: f64,
    pub steps: usize,
    pub initial_mass: f64,
    pub final_mass: f64,
    /// Largest relative change of the weighted total mass over a single step.
    pub max_step_mass_change: f64,
    /// `max_t ||c_eps||_{L2(Omega_eps^+-)}`.
    pub max_bulk_l2: f64,
    /// `max_t eps^{-1/2} ||c_eps^M||_{L2(Omega_eps^M)}`.
    pub max_layer_l2_scaled: f64,
    pub solver: StepStats,
}

#[derive(Debug, Clone)]
pub struct MicroTrajectory {
    pub grid: StructuredGrid,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub summary: MicroSummary,
}

pub fn solve_micro(
    scenario: &Scenario,
    inv_epsilon: u32,
    resolution: usize,
    dt: f64,
    snapshot_times: &[f64],
) -> Result<MicroTrajectory, SolverError> {
    let time = TimeGrid::new(scenario.t_final, dt)?;
    let snaps = time.snapshot_steps(snapshot_times)?;
    let system = MicroSystem::new(scenario, inv_epsilon, resolution, time.dt)?;
    let mut stepper = MicroStepper::new(&system, scenario, time)?;
    let initial_mass = system.operator.total_mass(stepper.state());
    let (mut prev_mass, mut max_change) = (initial_mass, 0.0f64);
    let (mut bulk, mut layer) = system.a_priori_norms(stepper.state());
    let (mut times, mut states) = (Vec::new(), Vec::new());
    let mut next = 0;
    loop {
        if next < snaps.len() && snaps[next] == stepper.step_index() {
            times.push(stepper.t());
            states.push(stepper.state().to_vec());
            next += 1;
        }
        if stepper.is_done() {
            break;
        }
        stepper.advance()?;
        let m = system.operator.total_mass(stepper.state());
        max_change = max_change.max((m - prev_mass).abs() / prev_mass.abs().max(f64::MIN_POSITIVE));
        prev_mass = m;
        let (b, l) = system.a_priori_norms(stepper.state());
        bulk = bulk.max(b);
        layer = layer.max(l);
    }
    let summary = MicroSummary {
        epsilon: system.epsilon(),
        per_period_resolution: resolution,
        nodes: system.grid.node_count(),
        dt: time.dt,
        steps: time.steps,
        initial_mass,
        final_mass: prev_mass,
        max_step_mass_change: max_change,
        max_bulk_l2: bulk,
        max_layer_l2_scaled: layer,
        solver: stepper.stats.clone(),
    };
    Ok(MicroTrajectory { grid: system.grid.clone(), times, states, summary })
}
