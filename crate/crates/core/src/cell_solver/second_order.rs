//! Second-order layer cell problem driven by the boundary-layer fluxes.

use super::{all_gradients, converged_or, CellError, FluxProfile, SampledCoefficient, CELL_TOL};
use crate::fem;
use crate::numerics::{dot, solve_cg, CgOptions, NullSpace, SolveReport};

/// Pre-projection load integrals above this are reported as inconsistent.
pub const COMPATIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderCell {
    pub direction: usize,
    pub w: Vec<f64>,
    pub gradients: Vec<[[f64; 2]; 4]>,
    pub mean: f64,
    /// `int_{S^+ u S^-} (Neumann data)` before the load was projected.
    pub compatibility_defect: f64,
    pub report: SolveReport,
    pub diagnostics: Vec<String>,
}

/// Solves `-div(D^M grad w) = 0` in `Z` with `-D^M grad w . nu = flux_+-` on
/// `S^+-`, periodic in `y1`, zero mean.
pub fn solve_cell_second_order(
    coef: &SampledCoefficient,
    flux_plus: &FluxProfile,
    flux_minus: &FluxProfile,
) -> Result<SecondOrderCell, CellError> {
    let grid = coef.grid();
    let n = grid.nx();
    for (label, f) in [("S^+", flux_plus), ("S^-", flux_minus)] {
        if f.load.len() != n {
            return Err(CellError::GridMismatch(format!(
                "flux on {label} has {} values, cell grid has {n} tangential nodes",
                f.load.len()
            )));
        }
    }
    let mut b = vec![0.0; grid.node_count()];
    let top = grid.ny() - 1;
    for i in 0..n {
        b[grid.node(i, top)] -= flux_plus.load[i];
        b[grid.node(i, 0)] -= flux_minus.load[i];
    }
    let k = coef.stiffness()?;
    let weights = fem::lumped_mass(grid);
    let (w, report) = solve_cg(&k, &b, None, &CgOptions::with_tol(CELL_TOL), NullSpace::WeightedConstants(&weights))?;
    let report = converged_or("second-order cell problem", report)?;
    let mut diagnostics = Vec::new();
    let compatibility_defect = report.consistency_defect;
    if compatibility_defect.abs() > COMPATIBILITY_TOL {
        diagnostics.push(format!(
            "flux data inconsistent: net Neumann load {compatibility_defect:.3e} exceeds {COMPATIBILITY_TOL:e}"
        ));
    }
    let mean = dot(&w, &weights) / grid.total_measure();
    Ok(SecondOrderCell {
        direction: 1,
        gradients: all_gradients(grid, &w),
        w,
        mean,
        compatibility_defect,
        report,
        diagnostics,
    })
}
