//! Auxiliary problems on the reference cell `Z = (0,1) x (-1,1)` and on the
//! half-infinite stripes `Y^+-`, plus the effective interface tensor.

mod boundary_layer;
mod second_order;

pub use boundary_layer::{boundary_flux, decay_rate, solve_boundary_layer, BoundaryLayerSolution, DecayFit, FluxProfile};
pub use second_order::{solve_cell_second_order, SecondOrderCell};

use crate::fem::{self, element_gradients, QUAD_POINTS, QUAD_WEIGHT};
use crate::geometry::{build_cell_grid, CellGeometry, GeometryError, Orientation, StripeGeometry, StructuredGrid};
use crate::numerics::{solve_cg, CgOptions, CsrMatrix, NullSpace, NumericsError, SolveReport, SymTensor2};
use crate::scenario::{EvalError, LayerCoefficient};
use serde::Serialize;
use thiserror::Error;

/// Relative CG tolerance for the cell problems.
pub const CELL_TOL: f64 = 1e-11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CellError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("{problem}: CG did not converge ({} iterations, relative residual {:.3e})", .report.iterations, .report.relative_residual)]
    NotConverged { problem: String, report: SolveReport },
    #[error("layer coefficient evaluation failed at y = ({y1}, {y2}): {source}")]
    Coefficient { y1: f64, y2: f64, source: EvalError },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("direction j = {0} does not exist; in two dimensions only j = 1 is tangential")]
    Direction(usize),
}

/// `D^M` sampled at the quadrature points of every element of the cell grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCoefficient {
    grid: StructuredGrid,
    /// Indexed by element `row * nx + column`.
    values: Vec<[SymTensor2; 4]>,
}

impl SampledCoefficient {
    pub fn from_fn(resolution: usize, f: impl Fn(f64, f64) -> SymTensor2) -> Result<Self, CellError> {
        Self::try_from_fn(resolution, |y1, y2| Ok(f(y1, y2)))
    }

    pub fn from_layer(d_m: &LayerCoefficient, resolution: usize) -> Result<Self, CellError> {
        Self::try_from_fn(resolution, |y1, y2| d_m.eval(y1, y2))
    }

    fn try_from_fn(
        resolution: usize,
        f: impl Fn(f64, f64) -> Result<SymTensor2, EvalError>,
    ) -> Result<Self, CellError> {
        let grid = build_cell_grid(&CellGeometry { resolution })?;
        let n = resolution as f64;
        let mut values = Vec::with_capacity(grid.nx() * (grid.ny() - 1));
        for k in 0..grid.ny() - 1 {
            for i in 0..grid.nx() {
                let mut v = [SymTensor2::ZERO; 4];
                for (q, &(xi, eta)) in QUAD_POINTS.iter().enumerate() {
                    let (y1, y2) = ((i as f64 + xi) / n, -1.0 + (k as f64 + eta) / n);
                    v[q] = f(y1, y2).map_err(|source| CellError::Coefficient { y1, y2, source })?;
                }
                values.push(v);
            }
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &StructuredGrid {
        &self.grid
    }

    pub fn resolution(&self) -> usize {
        self.grid.nx()
    }

    /// Tensor at quadrature point `q` of element `(i, k)` of the cell grid.
    #[inline]
    pub fn at(&self, i: usize, k: usize, q: usize) -> SymTensor2 {
        self.values[k * self.grid.nx() + i][q]
    }

    pub fn stiffness(&self) -> Result<CsrMatrix, CellError> {
        let g = &self.grid;
        let mut t = Vec::new();
        fem::assemble_stiffness(g, 0..g.ny() - 1, 1.0, |i, k, q| self.at(i, k, q), &mut t);
        Ok(CsrMatrix::from_triplets(g.node_count(), g.node_count(), &t)?)
    }
}

/// `w_{j,1}^M` for one tangential direction.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderCell {
    pub direction: usize,
    pub w: Vec<f64>,
    /// Gradient at the quadrature points of every element.
    pub gradients: Vec<[[f64; 2]; 4]>,
    /// `(1/|Z|) int_Z w`.
    pub mean: f64,
    pub report: SolveReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSolutionSet {
    pub cells: Vec<FirstOrderCell>,
}

/// Symmetric `(n-1) x (n-1)` effective tensor; `1 x 1` in two dimensions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveTensor {
    pub d_star: Vec<Vec<f64>>,
    /// Largest `|D_kl - D_lk|` before symmetrization.
    pub asymmetry: f64,
    pub min_eigenvalue: f64,
}

impl EffectiveTensor {
    pub fn d11(&self) -> f64 {
        self.d_star[0][0]
    }
}

pub(crate) fn check_direction(j: usize) -> Result<usize, CellError> {
    if j == 1 {
        Ok(0)
    } else {
        Err(CellError::Direction(j))
    }
}

pub(crate) fn all_gradients(grid: &StructuredGrid, w: &[f64]) -> Vec<[[f64; 2]; 4]> {
    let mut out = Vec::with_capacity(grid.nx() * (grid.ny() - 1));
    for k in 0..grid.ny() - 1 {
        for i in 0..grid.nx() {
            out.push(element_gradients(grid, w, i, k));
        }
    }
    out
}

pub(crate) fn converged_or(problem: &str, report: SolveReport) -> Result<SolveReport, CellError> {
    if report.converged {
        Ok(report)
    } else {
        Err(CellError::NotConverged { problem: problem.to_string(), report })
    }
}

/// Solves `-div(D^M (grad w + e_j)) = 0` in `Z`, periodic in `y1`, with zero
/// co-normal flux on `S^+-` and zero mean. `j` is 1-based.
pub fn solve_cell_first_order(coef: &SampledCoefficient, j: usize) -> Result<FirstOrderCell, CellError> {
    let axis = check_direction(j)?;
    let grid = coef.grid();
    let k = coef.stiffness()?;
    let mut b = vec![0.0; grid.node_count()];
    for row in 0..grid.ny() - 1 {
        let (hx, hy) = fem::element_size(grid, row);
        let jw = hx * hy * QUAD_WEIGHT;
        for i in 0..grid.nx() {
            let nodes = fem::element_nodes(grid, i, row);
            for (q, &(xi, eta)) in QUAD_POINTS.iter().enumerate() {
                let g = fem::shape_gradients(xi, eta, hx, hy);
                let mut e = [0.0; 2];
                e[axis] = 1.0;
                let de = coef.at(i, row, q).apply(e);
                for a in 0..4 {
                    b[nodes[a]] -= jw * (de[0] * g[a][0] + de[1] * g[a][1]);
                }
            }
        }
    }
    let weights = fem::lumped_mass(grid);
    let (w, report) = solve_cg(&k, &b, None, &CgOptions::with_tol(CELL_TOL), NullSpace::WeightedConstants(&weights))?;
    let report = converged_or("first-order cell problem", report)?;
    let mean = crate::numerics::dot(&w, &weights) / grid.total_measure();
    Ok(FirstOrderCell { direction: j, gradients: all_gradients(grid, &w), w, mean, report })
}

pub fn solve_cell_problems(coef: &SampledCoefficient) -> Result<CellSolutionSet, CellError> {
    Ok(CellSolutionSet { cells: vec![solve_cell_first_order(coef, 1)?] })
}

/// `D*_kl = (1/|Z|) int_Z D^M (grad w_k + e_k) . (grad w_l + e_l)`.
pub fn effective_tensor(coef: &SampledCoefficient, cells: &CellSolutionSet) -> Result<EffectiveTensor, CellError> {
    let grid = coef.grid();
    let m = cells.cells.len();
    for c in &cells.cells {
        if c.w.len() != grid.node_count() || c.gradients.len() != grid.nx() * (grid.ny() - 1) {
            return Err(CellError::GridMismatch(format!(
                "cell solution with {} nodes on a grid with {}",
                c.w.len(),
                grid.node_count()
            )));
        }
    }
    let mut d = vec![vec![0.0; m]; m];
    for row in 0..grid.ny() - 1 {
        let (hx, hy) = fem::element_size(grid, row);
        let jw = hx * hy * QUAD_WEIGHT;
        for i in 0..grid.nx() {
            let e = row * grid.nx() + i;
            for q in 0..4 {
                let dq = coef.at(i, row, q);
                let shifted = |c: &FirstOrderCell| {
                    let mut v = c.gradients[e][q];
                    v[c.direction - 1] += 1.0;
                    v
                };
                for (k, ck) in cells.cells.iter().enumerate() {
                    for (l, cl) in cells.cells.iter().enumerate() {
                        d[k][l] += jw * dq.inner(shifted(ck), shifted(cl));
                    }
                }
            }
        }
    }
    let measure = grid.total_measure();
    let mut asymmetry: f64 = 0.0;
    for k in 0..m {
        for l in 0..m {
            asymmetry = asymmetry.max((d[k][l] - d[l][k]).abs() / measure);
        }
    }
    let sym: Vec<Vec<f64>> = (0..m).map(|k| (0..m).map(|l| 0.5 * (d[k][l] + d[l][k]) / measure).collect()).collect();
    // m = 1 in two dimensions
    let min_eigenvalue = sym[0][0];
    Ok(EffectiveTensor { d_star: sym, asymmetry, min_eigenvalue })
}

/// Everything the correctors need from the auxiliary problems.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliarySolutions {
    pub coefficient: SampledCoefficient,
    pub cells: CellSolutionSet,
    pub tensor: EffectiveTensor,
    pub layer_plus: BoundaryLayerSolution,
    pub layer_minus: BoundaryLayerSolution,
    pub flux_plus: FluxProfile,
    pub flux_minus: FluxProfile,
    pub second: SecondOrderCell,
}

impl AuxiliarySolutions {
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        for bl in [&self.layer_plus, &self.layer_minus] {
            out.extend(bl.diagnostics.iter().map(|d| format!("boundary layer {}: {d}", bl.orientation.label())));
        }
        out.extend(self.second.diagnostics.iter().map(|d| format!("second-order cell: {d}")));
        out
    }

    pub fn boundary_layer(&self, o: Orientation) -> &BoundaryLayerSolution {
        match o {
            Orientation::Plus => &self.layer_plus,
            Orientation::Minus => &self.layer_minus,
        }
    }
}

/// Trace of `w_{1,1}^M` on `S^+` (`y2 = 1`) or `S^-` (`y2 = -1`).
pub fn cell_trace(coef: &SampledCoefficient, cell: &FirstOrderCell, o: Orientation) -> Vec<f64> {
    let grid = coef.grid();
    let row = match o {
        Orientation::Plus => grid.ny() - 1,
        Orientation::Minus => 0,
    };
    (0..grid.nx()).map(|i| cell.w[grid.node(i, row)]).collect()
}

/// Solves the first-order cell problem, both boundary layers and the
/// second-order cell problem. The two stripes are solved concurrently.
pub fn solve_auxiliary_problems(
    coefficient: SampledCoefficient,
    d_plus: SymTensor2,
    d_minus: SymTensor2,
    stripe_length: usize,
) -> Result<AuxiliarySolutions, CellError> {
    let resolution = coefficient.resolution();
    let cells = solve_cell_problems(&coefficient)?;
    let tensor = effective_tensor(&coefficient, &cells)?;
    let layer = |o: Orientation, d: SymTensor2| -> Result<(BoundaryLayerSolution, FluxProfile), CellError> {
        let trace = cell_trace(&coefficient, &cells.cells[0], o);
        let stripe = StripeGeometry { length: stripe_length, resolution, orientation: o };
        let bl = solve_boundary_layer(d, &trace, &stripe)?;
        let flux = boundary_flux(&bl, d)?;
        Ok((bl, flux))
    };
    let (plus, minus) = rayon::join(|| layer(Orientation::Plus, d_plus), || layer(Orientation::Minus, d_minus));
    let ((layer_plus, flux_plus), (layer_minus, flux_minus)) = (plus?, minus?);
    let second = solve_cell_second_order(&coefficient, &flux_plus, &flux_minus)?;
    Ok(AuxiliarySolutions { coefficient, cells, tensor, layer_plus, layer_minus, flux_plus, flux_minus, second })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{solve_dense, DenseMatrix};
    use proptest::prelude::*;

    fn d_star(resolution: usize, f: impl Fn(f64, f64) -> SymTensor2) -> (EffectiveTensor, CellSolutionSet) {
        let coef = SampledCoefficient::from_fn(resolution, f).unwrap();
        let cells = solve_cell_problems(&coef).unwrap();
        (effective_tensor(&coef, &cells).unwrap(), cells)
    }

    /// Independent 1D oracle: P1 solve of `(a (1 + w'))' = 0` on the periodic
    /// unit interval with `n` elements, `a` piecewise constant per element
    /// (evaluated at midpoints). Returns nodal `w` (mean-zero) and the
    /// effective coefficient `int a (1 + w')`.
    fn laminate_oracle(n: usize, a: impl Fn(f64) -> f64) -> (Vec<f64>, f64) {
        let h = 1.0 / n as f64;
        let ae: Vec<f64> = (0..n).map(|e| a((e as f64 + 0.5) * h)).collect();
        // unknowns w_1..w_{n-1} with w_0 = 0 pinned
        let m = n - 1;
        let mut k = DenseMatrix::zeros(m, m);
        let mut b = vec![0.0; m];
        for e in 0..n {
            let (l, r) = (e, (e + 1) % n);
            for (p, sp) in [(l, -1.0), (r, 1.0)] {
                if p == 0 {
                    continue;
                }
                b[p - 1] -= ae[e] * sp;
                for (q, sq) in [(l, -1.0), (r, 1.0)] {
                    if q != 0 {
                        k[(p - 1, q - 1)] += ae[e] * sp * sq / h;
                    }
                }
            }
        }
        let sol = solve_dense(&k, &b).unwrap();
        let mut w = vec![0.0];
        w.extend(sol);
        let mean = w.iter().sum::<f64>() / n as f64;
        w.iter_mut().for_each(|v| *v -= mean);
        let eff = (0..n).map(|e| h * ae[e] * (1.0 + (w[(e + 1) % n] - w[e]) / h)).sum();
        (w, eff)
    }

    #[test]
    fn identity_gives_zero_corrector() {
        let (t, cells) = d_star(8, |_, _| SymTensor2::IDENTITY);
        assert!(cells.cells[0].w.iter().all(|v| v.abs() <= 1e-10));
        assert!((t.d11() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn vertical_laminate_gives_zero_corrector() {
        let (_, cells) = d_star(8, |_, y2| SymTensor2::scalar(2.0 + (std::f64::consts::PI * y2).sin()));
        assert!(cells.cells[0].w.iter().all(|v| v.abs() <= 1e-10));
    }

    #[test]
    fn vertical_two_phase_laminate_is_arithmetic_mean() {
        let (t, _) = d_star(64, |_, y2| SymTensor2::scalar(if y2 < 0.0 { 1.0 } else { 3.0 }));
        assert!((t.d11() - 2.0).abs() <= 2e-3, "{}", t.d11());
    }

    #[test]
    fn tangential_laminate_matches_one_dimensional_oracle() {
        let a = |y1: f64| if y1 < 0.5 { 1.0 } else { 4.0 };
        let n = 64;
        let (t, cells) = d_star(n, |y1, _| SymTensor2::scalar(a(y1)));
        assert!((t.d11() - 1.6).abs() <= 2e-3, "{}", t.d11());
        let (oracle, eff) = laminate_oracle(n, a);
        assert!((eff - 1.6).abs() < 1e-12);
        let coef = SampledCoefficient::from_fn(n, |y1, _| SymTensor2::scalar(a(y1))).unwrap();
        let grid = coef.grid();
        let w = &cells.cells[0].w;
        for row in [0, grid.ny() / 2, grid.ny() - 1] {
            for i in 0..n {
                assert!((w[grid.node(i, row)] - oracle[i]).abs() < 1e-8, "row {row} col {i}");
            }
        }
        // slopes 0.6 on the soft phase and -0.6 on the stiff one
        assert!(((w[grid.node(1, 0)] - w[grid.node(0, 0)]) * n as f64 - 0.6).abs() < 1e-8);
        assert!(((w[grid.node(n / 2 + 1, 0)] - w[grid.node(n / 2, 0)]) * n as f64 + 0.6).abs() < 1e-8);
    }

    #[test]
    fn solution_invariants() {
        let coef = SampledCoefficient::from_fn(8, |y1, y2| {
            SymTensor2::new(2.0 + (2.0 * std::f64::consts::PI * y1).sin() * (1.0 + 0.3 * y2), 0.2, 1.5)
        })
        .unwrap();
        let cell = solve_cell_first_order(&coef, 1).unwrap();
        assert!(cell.mean.abs() <= 1e-10);
        assert!(cell.report.relative_residual <= 1e-10);
        assert!(matches!(solve_cell_first_order(&coef, 2), Err(CellError::Direction(2))));
    }

    #[test]
    fn smooth_coefficient_converges_at_second_order() {
        // for a(y1) the exact value is the harmonic mean: (int 1/(2+sin))^-1 = sqrt(3)
        let exact = 3f64.sqrt();
        let errs: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&n| {
                let (t, _) = d_star(n, |y1, _| SymTensor2::scalar(2.0 + (2.0 * std::f64::consts::PI * y1).sin()));
                (t.d11() - exact).abs()
            })
            .collect();
        let order = ((errs[0] / errs[2]).ln()) / 4f64.ln();
        assert!(order >= 1.5, "errors {errs:?}, order {order}");
    }

    #[test]
    fn effective_tensor_rejects_foreign_cells() {
        let coarse = SampledCoefficient::from_fn(4, |_, _| SymTensor2::IDENTITY).unwrap();
        let fine = SampledCoefficient::from_fn(8, |_, _| SymTensor2::IDENTITY).unwrap();
        let cells = solve_cell_problems(&coarse).unwrap();
        assert!(matches!(effective_tensor(&fine, &cells), Err(CellError::GridMismatch(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn voigt_reuss_bounds(
            modes in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 1usize..3, 0usize..2), 1..4)
        ) {
            // a(y) = 3 + bounded trigonometric sum scaled into [1, 5]
            let raw = move |y1: f64, y2: f64| -> f64 {
                modes.iter().map(|&(s, c, k, l)| {
                    let arg = 2.0 * std::f64::consts::PI * k as f64 * y1 + std::f64::consts::PI * l as f64 * y2;
                    s * arg.sin() + c * arg.cos()
                }).sum::<f64>()
            };
            let peak: f64 = 3.0;
            let bound = {
                let mut m: f64 = 1e-12;
                for i in 0..200 { for j in 0..200 {
                    m = m.max(raw(i as f64 / 200.0, -1.0 + j as f64 / 100.0).abs());
                }}
                m
            };
            let a = move |y1: f64, y2: f64| peak + 1.9 * raw(y1, y2) / bound;
            let n = 16;
            let coef = SampledCoefficient::from_fn(n, |y1, y2| SymTensor2::scalar(a(y1, y2))).unwrap();
            let cells = solve_cell_problems(&coef).unwrap();
            let t = effective_tensor(&coef, &cells).unwrap();
            // arithmetic and harmonic means with the same quadrature
            let grid = coef.grid();
            let (mut arith, mut harm) = (0.0, 0.0);
            for k in 0..grid.ny() - 1 {
                for i in 0..grid.nx() {
                    for q in 0..4 {
                        let v = coef.at(i, k, q).xx;
                        arith += v;
                        harm += 1.0 / v;
                    }
                }
            }
            let count = (grid.nx() * (grid.ny() - 1) * 4) as f64;
            let (arith, harm) = (arith / count, count / harm);
            prop_assert!(t.d11() <= arith + 1e-10, "D* {} > arithmetic {}", t.d11(), arith);
            prop_assert!(t.d11() >= harm - 1e-10, "D* {} < harmonic {}", t.d11(), harm);
            prop_assert!(t.asymmetry < 1e-12);
        }
    }
}
