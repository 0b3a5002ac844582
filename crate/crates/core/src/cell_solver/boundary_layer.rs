//! Boundary-layer problems on the stripes `Y^+-` truncated at `|y_n| = L`.

use super::{converged_or, CellError};
use crate::fem::{self, QUAD_POINTS, QUAD_WEIGHT};
use crate::geometry::{build_stripe_grid, Marker, Orientation, StripeGeometry, StructuredGrid};
use crate::numerics::{solve_cg, CgOptions, CsrMatrix, NullSpace, SolveReport, SymTensor2};
use serde::Serialize;

/// Relative CG tolerance for the stripe solves. Tighter than the cell
/// problems so that the slab energies far from the trace stay resolved.
pub const STRIPE_TOL: f64 = 1e-13;
/// Slabs whose energy is below this fraction of the largest are treated as
/// round-off and left out of the decay fit.
pub const ENERGY_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    /// Fitted `omega` with `E_k ~ exp(-2 omega k)`; `+inf` for vanishing energies.
    pub omega: f64,
    /// Largest ratio `E_{k+1} / E_k` over the resolved slabs.
    pub ratio: f64,
    /// Number of slabs that entered the least-squares fit.
    pub fitted_slabs: usize,
    pub monotone: bool,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryLayerSolution {
    pub orientation: Orientation,
    pub grid: StructuredGrid,
    pub w: Vec<f64>,
    /// Dirichlet data on the row `y_n = 0`.
    pub trace: Vec<f64>,
    /// `E_k = ||grad w||^2` over the slab `k - 1 <= |y_n| <= k`, `k = 1..=L`.
    pub slab_energies: Vec<f64>,
    pub decay: DecayFit,
    pub report: SolveReport,
    pub diagnostics: Vec<String>,
}

impl BoundaryLayerSolution {
    /// Grid row of the trace line.
    pub fn trace_row(&self) -> usize {
        self.grid.marker(Marker::Trace).expect("stripe grids carry a trace marker")
    }

    /// Value of `w` at tangential node `i` and distance `d` grid rows from
    /// the trace line (into the stripe).
    pub fn at_depth(&self, i: usize, d: usize) -> f64 {
        let row = match self.orientation {
            Orientation::Plus => d,
            Orientation::Minus => self.grid.ny() - 1 - d,
        };
        self.w[self.grid.node(i, row)]
    }
}

/// Co-normal flux `-D grad w . nu` on the trace line, with `nu` the outward
/// normal of the cell `Z` at `S^+-` (`+e_n` for the upper stripe, `-e_n` for the
/// lower one).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluxProfile {
    /// Variational load `int flux phi_i` per tangential node.
    pub load: Vec<f64>,
    /// Nodal flux density (the load divided by the periodic line mass).
    pub nodal: Vec<f64>,
    pub spacing: f64,
}

impl FluxProfile {
    pub fn zero(n: usize) -> Self {
        Self { load: vec![0.0; n], nodal: vec![0.0; n], spacing: 1.0 / n as f64 }
    }

    /// Profile from nodal flux densities on a uniform periodic grid of `(0, 1)`.
    pub fn from_nodal(nodal: Vec<f64>) -> Self {
        let n = nodal.len();
        let h = 1.0 / n as f64;
        let load = (0..n)
            .map(|i| h * (4.0 * nodal[i] + nodal[(i + n - 1) % n] + nodal[(i + 1) % n]) / 6.0)
            .collect();
        Self { load, nodal, spacing: h }
    }
}

fn stripe_stiffness(grid: &StructuredGrid, d: SymTensor2) -> Result<CsrMatrix, CellError> {
    let mut t = Vec::new();
    fem::assemble_stiffness(grid, 0..grid.ny() - 1, 1.0, |_, _, _| d, &mut t);
    Ok(CsrMatrix::from_triplets(grid.node_count(), grid.node_count(), &t)?)
}

/// `||grad w||^2` per unit slab, ordered away from the trace line.
fn slab_energies(grid: &StructuredGrid, w: &[f64], o: Orientation, length: usize, resolution: usize) -> Vec<f64> {
    let rows = length * resolution;
    let mut out = vec![0.0; length];
    for row in 0..rows {
        let (hx, hy) = fem::element_size(grid, row);
        let jw = hx * hy * QUAD_WEIGHT;
        let depth = match o {
            Orientation::Plus => row,
            Orientation::Minus => rows - 1 - row,
        };
        let slab = depth / resolution;
        for i in 0..grid.nx() {
            let g = fem::element_gradients(grid, w, i, row);
            for gq in g.iter().take(QUAD_POINTS.len()) {
                out[slab] += jw * (gq[0] * gq[0] + gq[1] * gq[1]);
            }
        }
    }
    out
}

/// Fits `E_k ~ exp(-2 omega k)` by least squares on `log E_k` over the slabs
/// `2..=L-1` (1-based) whose energy is resolved.
pub fn decay_rate(energies: &[f64]) -> DecayFit {
    let max = energies.iter().cloned().fold(0.0f64, f64::max);
    let mut diagnostics = Vec::new();
    if max <= 0.0 {
        return DecayFit { omega: f64::INFINITY, ratio: 0.0, fitted_slabs: 0, monotone: true, diagnostics };
    }
    let floor = ENERGY_FLOOR * max;
    let len = energies.len();
    let pts: Vec<(f64, f64)> = (2..len)
        .filter(|&k| energies[k - 1] >= floor)
        .map(|k| (k as f64, energies[k - 1].ln()))
        .collect();
    let resolved: Vec<usize> = (0..len).filter(|&k| energies[k] >= floor).collect();
    let mut ratio: f64 = 0.0;
    let mut monotone = true;
    for pair in resolved.windows(2) {
        if pair[1] != pair[0] + 1 {
            continue;
        }
        let r = energies[pair[1]] / energies[pair[0]];
        ratio = ratio.max(r);
        if r > 1.0 {
            monotone = false;
        }
    }
    if !monotone {
        diagnostics.push("slab energies are not monotonically decreasing".to_string());
    }
    let omega = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        -(sxy / sxx) / 2.0
    } else {
        // energy confined to the first slab: decay faster than the stripe resolves
        diagnostics.push(format!("only {} slab(s) above the energy floor; decay rate not resolved", pts.len()));
        f64::INFINITY
    };
    if ratio >= 1.0 {
        diagnostics.push(format!("slab energy ratio {ratio:.3} >= 1; increase the stripe length"));
    }
    DecayFit { omega, ratio, fitted_slabs: pts.len(), monotone, diagnostics }
}

/// Solves `-div(D grad w) = 0` on the truncated stripe with `w = trace` on
/// `y_n = 0`, zero flux on `|y_n| = L` and periodicity in `y1`.
pub fn solve_boundary_layer(
    d_bulk: SymTensor2,
    trace: &[f64],
    stripe: &StripeGeometry,
) -> Result<BoundaryLayerSolution, CellError> {
    let grid = build_stripe_grid(stripe)?;
    if trace.len() != grid.nx() {
        return Err(CellError::GridMismatch(format!(
            "trace has {} values, stripe has {} tangential nodes",
            trace.len(),
            grid.nx()
        )));
    }
    let trace_row = grid.require_marker(Marker::Trace)?;
    let scale = trace.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let constant = trace.iter().all(|v| (v - trace[0]).abs() <= 1e-14 * scale);
    let (w, report) = if constant {
        (vec![trace[0]; grid.node_count()], SolveReport { converged: true, ..Default::default() })
    } else {
        let k = stripe_stiffness(&grid, d_bulk)?;
        let free: Vec<usize> = (0..grid.node_count()).filter(|&n| n / grid.nx() != trace_row).collect();
        let mut full = vec![0.0; grid.node_count()];
        for (i, &v) in trace.iter().enumerate() {
            full[grid.node(i, trace_row)] = v;
        }
        let kd = k.mul_vec(&full);
        let rhs: Vec<f64> = free.iter().map(|&n| -kd[n]).collect();
        let kff = k.submatrix(&free);
        let (u, report) = solve_cg(&kff, &rhs, None, &CgOptions::with_tol(STRIPE_TOL), NullSpace::None)?;
        let report = converged_or("boundary-layer problem", report)?;
        for (&n, v) in free.iter().zip(u) {
            full[n] = v;
        }
        (full, report)
    };
    let slab_energies = if constant {
        vec![0.0; stripe.length]
    } else {
        slab_energies(&grid, &w, stripe.orientation, stripe.length, stripe.resolution)
    };
    let decay = decay_rate(&slab_energies);
    let diagnostics = decay.diagnostics.clone();
    Ok(BoundaryLayerSolution {
        orientation: stripe.orientation,
        grid,
        w,
        trace: trace.to_vec(),
        slab_energies,
        decay,
        report,
        diagnostics,
    })
}

/// Discrete co-normal flux on the trace line, computed from the residual of
/// the stripe equations at the Dirichlet nodes.
pub fn boundary_flux(bl: &BoundaryLayerSolution, d_bulk: SymTensor2) -> Result<FluxProfile, CellError> {
    let grid = &bl.grid;
    let n = grid.nx();
    let k = stripe_stiffness(grid, d_bulk)?;
    let r = k.mul_vec(&bl.w);
    let row = bl.trace_row();
    // (K w)_i = int (D grad w . n_out) phi_i with n_out the stripe's outward
    // normal at y_n = 0, which is -nu for both orientations
    let load: Vec<f64> = (0..n).map(|i| r[grid.node(i, row)]).collect();
    let h = grid.hx();
    let mut t = Vec::with_capacity(4 * n);
    for i in 0..n {
        let j = (i + 1) % n;
        t.extend_from_slice(&[(i, i, h / 3.0), (j, j, h / 3.0), (i, j, h / 6.0), (j, i, h / 6.0)]);
    }
    let m = CsrMatrix::from_triplets(n, n, &t)?;
    let (nodal, report) = solve_cg(&m, &load, None, &CgOptions::with_tol(1e-14), NullSpace::None)?;
    converged_or("interface mass solve", report)?;
    Ok(FluxProfile { load, nodal, spacing: h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn stripe(o: Orientation, resolution: usize) -> StripeGeometry {
        StripeGeometry { length: 8, resolution, orientation: o }
    }

    fn cos_trace(n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * i as f64 / n as f64).cos()).collect()
    }

    #[test]
    fn zero_trace_gives_zero() {
        let bl = solve_boundary_layer(SymTensor2::IDENTITY, &[0.0; 8], &stripe(Orientation::Plus, 8)).unwrap();
        assert!(bl.w.iter().all(|&v| v == 0.0));
        assert_eq!(bl.decay.omega, f64::INFINITY);
        let f = boundary_flux(&bl, SymTensor2::IDENTITY).unwrap();
        assert!(f.nodal.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn constant_trace_gives_constant() {
        let bl = solve_boundary_layer(SymTensor2::new(2.0, 0.5, 1.0), &[0.7; 8], &stripe(Orientation::Minus, 8)).unwrap();
        assert!(bl.w.iter().all(|&v| v == 0.7));
        assert!(bl.slab_energies.iter().all(|&e| e == 0.0));
        let f = boundary_flux(&bl, SymTensor2::new(2.0, 0.5, 1.0)).unwrap();
        assert!(f.nodal.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn decay_rate_of_constructed_energies() {
        let e: Vec<f64> = (1..=8).map(|k| (-4.0 * k as f64).exp()).collect();
        let fit = decay_rate(&e);
        assert!((fit.omega - 2.0).abs() < 1e-12);
        assert!((fit.ratio - (-4.0f64).exp()).abs() < 1e-12);
        assert!(fit.monotone && fit.diagnostics.is_empty());
        assert_eq!(decay_rate(&[0.0; 8]).omega, f64::INFINITY);
    }

    #[test]
    fn non_monotone_energies_are_flagged() {
        let fit = decay_rate(&[1.0, 0.5, 0.6, 0.1, 0.05, 0.01]);
        assert!(!fit.monotone);
        assert!(fit.omega.is_finite());
        assert!(fit.diagnostics.iter().any(|d| d.contains("monoton")));
    }

    #[test]
    fn separable_solution_decays_at_two_pi() {
        for o in [Orientation::Plus, Orientation::Minus] {
            let bl = solve_boundary_layer(SymTensor2::IDENTITY, &cos_trace(16), &stripe(o, 16)).unwrap();
            let omega = bl.decay.omega;
            assert!((omega - 2.0 * PI).abs() <= 0.15 * 2.0 * PI, "{o:?}: omega {omega}");
            assert!(bl.decay.ratio < 1.0);
            // the trace is reproduced exactly
            for i in 0..16 {
                assert_eq!(bl.at_depth(i, 0), bl.trace[i]);
            }
        }
    }

    #[test]
    fn flux_matches_separable_oracle() {
        let n = 32;
        for o in [Orientation::Plus, Orientation::Minus] {
            let bl = solve_boundary_layer(SymTensor2::IDENTITY, &cos_trace(n), &stripe(o, n)).unwrap();
            let f = boundary_flux(&bl, SymTensor2::IDENTITY).unwrap();
            for (i, v) in f.nodal.iter().enumerate() {
                let exact = 2.0 * PI * (2.0 * PI * i as f64 / n as f64).cos();
                assert!((v - exact).abs() <= 0.05 * 2.0 * PI, "{o:?} node {i}: {v} vs {exact}");
            }
            // the discrete flux integrates to zero
            assert!(f.load.iter().sum::<f64>().abs() < 1e-10);
        }
    }

    #[test]
    fn maximum_principle() {
        let trace: Vec<f64> = (0..8).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let bl = solve_boundary_layer(SymTensor2::new(1.5, 0.0, 1.0), &trace, &stripe(Orientation::Plus, 8)).unwrap();
        let (lo, hi) = trace.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(bl.w.iter().all(|&v| v >= lo - 1e-10 && v <= hi + 1e-10));
    }

    #[test]
    fn trace_length_is_checked() {
        let err = solve_boundary_layer(SymTensor2::IDENTITY, &[1.0, 2.0], &stripe(Orientation::Plus, 8)).unwrap_err();
        assert!(matches!(err, CellError::GridMismatch(_)));
    }

    #[test]
    fn nodal_profile_load_is_consistent() {
        let f = FluxProfile::from_nodal(vec![1.0; 6]);
        assert!((f.load.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
