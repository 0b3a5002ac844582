//! First- and second-order approximations of the micro solution assembled
//! from the macro solution and the cell and boundary-layer correctors.
//!
//! Approximations are discontinuous across `S_eps^+-`, so they are stored
//! per region on the fixed domains, in the same layout as
//! [`ShiftedFields`](crate::micro_solver::ShiftedFields).

use crate::cell_solver::AuxiliarySolutions;
use crate::geometry::{Marker, Orientation, StructuredGrid};
use crate::micro_solver::{MicroSystem, ShiftedFields};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrectorError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("cell coordinate y2 = {0} lies outside [-1, 1]")]
    OutsideCell(f64),
    #[error("sample grid is empty")]
    EmptyGrid,
}

/// `C^2` cutoff equal to 1 for `|x_n| <= H/4` and 0 for `|x_n| >= 3H/4`.
pub fn cutoff_psi(x_n: f64, h: f64) -> f64 {
    let u = ((x_n.abs() - 0.25 * h) / (0.5 * h)).clamp(0.0, 1.0);
    1.0 - u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
}

/// How vertical queries outside a sampled field are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extension {
    /// Cell fields: `y2` must lie in the grid's range.
    Reject,
    /// Stripe fields: constant extension beyond the truncation line.
    Clamp,
}

const SNAP: f64 = 1e-9;

/// Splits a grid coordinate `t` into a cell index and a local offset,
/// snapping to the nearest node when within round-off.
fn locate(t: f64, cells: usize) -> (usize, f64) {
    let r = t.round();
    if (t - r).abs() < SNAP {
        let k = r as usize;
        return if k >= cells { (cells - 1, 1.0) } else { (k, 0.0) };
    }
    let k = (t.floor() as usize).min(cells - 1);
    (k, t - k as f64)
}

/// Bilinear interpolation of a nodal field on a periodic structured grid of
/// width 1, at the cell coordinates `(y1, y2)`; `y1` is wrapped into `[0, 1)`.
pub fn periodic_sample(
    grid: &StructuredGrid,
    values: &[f64],
    y1: f64,
    y2: f64,
    extension: Extension,
) -> Result<f64, CorrectorError> {
    let ys = grid.ys();
    if ys.len() < 2 || grid.nx() == 0 {
        return Err(CorrectorError::EmptyGrid);
    }
    if values.len() != grid.node_count() {
        return Err(CorrectorError::GridMismatch(format!(
            "{} values on a grid of {} nodes",
            values.len(),
            grid.node_count()
        )));
    }
    let (lo, hi) = (ys[0], ys[ys.len() - 1]);
    let y2 = match extension {
        Extension::Clamp => y2.clamp(lo, hi),
        Extension::Reject if y2 < lo - SNAP || y2 > hi + SNAP => return Err(CorrectorError::OutsideCell(y2)),
        Extension::Reject => y2.clamp(lo, hi),
    };
    let nx = grid.nx();
    let (i, a) = locate(y1.rem_euclid(1.0) * nx as f64, nx);
    let (i, a) = if i >= nx { (0, a) } else { (i, a) };
    let rows = ys.len() - 1;
    let (j, b) = locate((y2 - lo) / (hi - lo) * rows as f64, rows);
    let ip = grid.right(i);
    let v = |i: usize, j: usize| values[grid.node(i, j)];
    let bottom = (1.0 - a) * v(i, j) + a * v(ip, j);
    if b == 0.0 {
        return Ok(bottom);
    }
    let top = (1.0 - a) * v(i, j + 1) + a * v(ip, j + 1);
    Ok((1.0 - b) * bottom + b * top)
}

/// One macro snapshot: the nodal field and its tangential derivative on the macro grid.
#[derive(Debug, Clone, Copy)]
pub struct MacroSnapshot<'a> {
    pub t: f64,
    pub values: &'a [f64],
    pub derivative: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Order {
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproximationField {
    pub order: Order,
    pub t: f64,
    pub fields: ShiftedFields,
    /// `max |bulk - layer|` over the nodes of `S_eps^+` and `S_eps^-`.
    pub jump_plus: f64,
    pub jump_minus: f64,
}

/// Per-region precomputed data: macro node of every region node and the
/// corrector samples at `x / eps`.
#[derive(Debug, Clone)]
struct RegionMap {
    macro_node: Vec<usize>,
    /// `psi(x_n) w^{bl}(x/eps)` in the bulk, `w_1^M(x/eps)` in the layer.
    first: Vec<f64>,
    /// `w_2^M(x/eps)` in the layer, empty in the bulk.
    second: Vec<f64>,
}

/// Builds approximations on one micro grid from macro snapshots.
#[derive(Debug, Clone)]
pub struct ApproximationBuilder {
    epsilon: f64,
    template: ShiftedFields,
    plus: RegionMap,
    minus: RegionMap,
    layer: RegionMap,
    macro_nodes: usize,
}

impl ApproximationBuilder {
    pub fn new(
        micro: &MicroSystem,
        aux: &AuxiliarySolutions,
        macro_grid: &StructuredGrid,
    ) -> Result<Self, CorrectorError> {
        let g = &micro.grid;
        let (pu, pm) = (g.per_unit(), macro_grid.per_unit());
        let sigma = macro_grid
            .marker(Marker::Sigma)
            .ok_or_else(|| CorrectorError::GridMismatch("macro grid has no Sigma row".into()))?;
        if pu == 0 || pm % pu != 0 || macro_grid.nx() != g.nx() * (pm / pu) {
            return Err(CorrectorError::GridMismatch(format!(
                "macro spacing 1/{pm} does not refine micro spacing 1/{pu}"
            )));
        }
        let r = pm / pu;
        let eps = micro.epsilon();
        let height = micro.geometry.height as f64;
        let template = micro
            .shift_to_fixed_domains(&vec![0.0; g.node_count()])
            .map_err(|e| CorrectorError::GridMismatch(e.to_string()))?;
        if (template.plus_grid.ny() - 1) * r != macro_grid.ny() - 1 - sigma || (template.minus_grid.ny() - 1) * r != sigma {
            return Err(CorrectorError::GridMismatch("macro and micro bulk heights differ".into()));
        }
        let cell_grid = aux.coefficient.grid();
        let w1 = &aux.cells.cells[0].w;
        let w2 = &aux.second.w;

        let bulk = |fg: &StructuredGrid, o: Orientation| -> Result<RegionMap, CorrectorError> {
            let bl = aux.boundary_layer(o);
            let (n_rows, nx) = (fg.ny(), fg.nx());
            let mut map = RegionMap { macro_node: Vec::new(), first: Vec::new(), second: Vec::new() };
            for j in 0..n_rows {
                let xn = fg.ys()[j];
                let macro_row = match o {
                    Orientation::Plus => sigma + j * r,
                    Orientation::Minus => sigma - (n_rows - 1 - j) * r,
                };
                let psi = cutoff_psi(xn, height);
                for i in 0..nx {
                    map.macro_node.push(macro_grid.node(i * r, macro_row));
                    let w = if psi == 0.0 {
                        0.0
                    } else {
                        psi * periodic_sample(&bl.grid, &bl.w, fg.x(i) / eps, xn / eps, Extension::Clamp)?
                    };
                    map.first.push(w);
                }
            }
            Ok(map)
        };
        let plus = bulk(&template.plus_grid, Orientation::Plus)?;
        let minus = bulk(&template.minus_grid, Orientation::Minus)?;

        let lg = &template.layer_grid;
        let mut layer = RegionMap { macro_node: Vec::new(), first: Vec::new(), second: Vec::new() };
        for j in 0..lg.ny() {
            let y2 = lg.ys()[j] / eps;
            for i in 0..lg.nx() {
                let y1 = lg.x(i) / eps;
                layer.macro_node.push(macro_grid.node(i * r, sigma));
                layer.first.push(periodic_sample(cell_grid, w1, y1, y2, Extension::Reject)?);
                layer.second.push(periodic_sample(cell_grid, w2, y1, y2, Extension::Reject)?);
            }
        }
        Ok(Self { epsilon: eps, template, plus, minus, layer, macro_nodes: macro_grid.node_count() })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn build(&self, order: Order, snap: MacroSnapshot) -> Result<ApproximationField, CorrectorError> {
        if snap.values.len() != self.macro_nodes || snap.derivative.len() != self.macro_nodes {
            return Err(CorrectorError::GridMismatch("macro snapshot does not match the macro grid".into()));
        }
        let eps = self.epsilon;
        let (c, d) = (snap.values, snap.derivative);
        let bulk = |m: &RegionMap| -> Vec<f64> {
            match order {
                Order::First => m.macro_node.iter().map(|&p| c[p]).collect(),
                Order::Second => m.macro_node.iter().zip(&m.first).map(|(&p, w)| c[p] + eps * d[p] * w).collect(),
            }
        };
        let m = &self.layer;
        let layer: Vec<f64> = (0..m.macro_node.len())
            .map(|k| {
                let p = m.macro_node[k];
                let first = c[p] + eps * d[p] * m.first[k];
                match order {
                    Order::First => first,
                    Order::Second => first + eps * eps * d[p] * m.second[k],
                }
            })
            .collect();
        let mut fields = self.template.clone();
        fields.plus = bulk(&self.plus);
        fields.minus = bulk(&self.minus);
        fields.layer = layer;
        let nx = fields.plus_grid.nx();
        let jump = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let nl = fields.layer.len();
        let jump_plus = jump(&fields.plus[..nx], &fields.layer[nl - nx..]);
        let jump_minus = jump(&fields.minus[fields.minus.len() - nx..], &fields.layer[..nx]);
        Ok(ApproximationField { order, t: snap.t, fields, jump_plus, jump_minus })
    }
}

/// `c_{eps,app,1}`: macro bulk fields, layer `c_0^M + eps d1 c_0^M w_1^M(x/eps)`.
pub fn build_capp1(
    snap: MacroSnapshot,
    aux: &AuxiliarySolutions,
    macro_grid: &StructuredGrid,
    micro: &MicroSystem,
) -> Result<ApproximationField, CorrectorError> {
    ApproximationBuilder::new(micro, aux, macro_grid)?.build(Order::First, snap)
}

/// `c_{eps,app,2}`: bulk `c_0 + eps psi d1 c_0 w^{bl}(x/eps)`, layer
/// `c_0^M + eps c_1^M + eps^2 c_2^M`.
pub fn build_capp2(
    snap: MacroSnapshot,
    aux: &AuxiliarySolutions,
    macro_grid: &StructuredGrid,
    micro: &MicroSystem,
) -> Result<ApproximationField, CorrectorError> {
    ApproximationBuilder::new(micro, aux, macro_grid)?.build(Order::Second, snap)
}
