//! Bilinear (Q1) elements on [`StructuredGrid`]s, integrated with 2x2 Gauss
//! quadrature, plus the periodic P1 line elements used on the interface.
//!
//! Local node order of element `(i, j)`: `(i, j)`, `(i+1, j)`, `(i+1, j+1)`,
//! `(i, j+1)`, with the tangential index wrapped periodically.

use crate::geometry::StructuredGrid;
use crate::numerics::SymTensor2;
use std::ops::Range;

pub type Triplets = Vec<(usize, usize, f64)>;

const G: f64 = 0.211_324_865_405_187_1; // (1 - 1/sqrt(3)) / 2

/// Reference quadrature points `(xi, eta)` on `[0,1]^2`; all weights are `1/4`.
pub const QUAD_POINTS: [(f64, f64); 4] = [(G, G), (1.0 - G, G), (1.0 - G, 1.0 - G), (G, 1.0 - G)];
pub const QUAD_WEIGHT: f64 = 0.25;

#[inline]
pub fn shape(xi: f64, eta: f64) -> [f64; 4] {
    [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), xi * eta, (1.0 - xi) * eta]
}

/// Physical gradients of the four shape functions.
#[inline]
pub fn shape_gradients(xi: f64, eta: f64, hx: f64, hy: f64) -> [[f64; 2]; 4] {
    [
        [-(1.0 - eta) / hx, -(1.0 - xi) / hy],
        [(1.0 - eta) / hx, -xi / hy],
        [eta / hx, xi / hy],
        [-eta / hx, (1.0 - xi) / hy],
    ]
}

pub fn element_mass(hx: f64, hy: f64) -> [[f64; 4]; 4] {
    let s = hx * hy / 36.0;
    [
        [4.0 * s, 2.0 * s, s, 2.0 * s],
        [2.0 * s, 4.0 * s, 2.0 * s, s],
        [s, 2.0 * s, 4.0 * s, 2.0 * s],
        [2.0 * s, s, 2.0 * s, 4.0 * s],
    ]
}

/// `K_ab = int D grad N_b . grad N_a` with `D` given per quadrature point.
pub fn element_stiffness(hx: f64, hy: f64, coeff: &[SymTensor2; 4]) -> [[f64; 4]; 4] {
    let mut k = [[0.0; 4]; 4];
    let jw = hx * hy * QUAD_WEIGHT;
    for (q, &(xi, eta)) in QUAD_POINTS.iter().enumerate() {
        let g = shape_gradients(xi, eta, hx, hy);
        for a in 0..4 {
            for b in 0..4 {
                k[a][b] += jw * coeff[q].inner(g[a], g[b]);
            }
        }
    }
    k
}

#[inline]
pub fn element_nodes(grid: &StructuredGrid, i: usize, j: usize) -> [usize; 4] {
    let ir = grid.right(i);
    [grid.node(i, j), grid.node(ir, j), grid.node(ir, j + 1), grid.node(i, j + 1)]
}

#[inline]
pub fn element_size(grid: &StructuredGrid, j: usize) -> (f64, f64) {
    (grid.hx(), grid.ys()[j + 1] - grid.ys()[j])
}

/// Physical coordinates of quadrature point `q` in element `(i, j)`.
#[inline]
pub fn quad_point(grid: &StructuredGrid, i: usize, j: usize, q: usize) -> (f64, f64) {
    let (xi, eta) = QUAD_POINTS[q];
    let (hx, hy) = element_size(grid, j);
    ((i as f64 + xi) * hx, grid.ys()[j] + eta * hy)
}

/// Adds `weight * mass` over the vertical intervals `rows`.
pub fn assemble_mass(grid: &StructuredGrid, rows: Range<usize>, weight: f64, out: &mut Triplets) {
    for j in rows {
        let (hx, hy) = element_size(grid, j);
        let m = element_mass(hx, hy);
        for i in 0..grid.nx() {
            scatter(&element_nodes(grid, i, j), &m, weight, out);
        }
    }
}

/// Adds `weight * stiffness` over the vertical intervals `rows`; `coeff(i, j, q)`
/// gives the diffusion tensor at quadrature point `q` of element `(i, j)`.
pub fn assemble_stiffness(
    grid: &StructuredGrid,
    rows: Range<usize>,
    weight: f64,
    coeff: impl Fn(usize, usize, usize) -> SymTensor2,
    out: &mut Triplets,
) {
    for j in rows {
        let (hx, hy) = element_size(grid, j);
        for i in 0..grid.nx() {
            let c = [coeff(i, j, 0), coeff(i, j, 1), coeff(i, j, 2), coeff(i, j, 3)];
            let k = element_stiffness(hx, hy, &c);
            scatter(&element_nodes(grid, i, j), &k, weight, out);
        }
    }
}

fn scatter(nodes: &[usize; 4], local: &[[f64; 4]; 4], weight: f64, out: &mut Triplets) {
    for a in 0..4 {
        for b in 0..4 {
            out.push((nodes[a], nodes[b], weight * local[a][b]));
        }
    }
}

/// Periodic P1 line mass on grid row `j`, scaled by `weight`.
pub fn assemble_line_mass(grid: &StructuredGrid, j: usize, weight: f64, out: &mut Triplets) {
    let h = grid.hx();
    for i in 0..grid.nx() {
        let (a, b) = (grid.node(i, j), grid.node(grid.right(i), j));
        let (d, o) = (weight * h / 3.0, weight * h / 6.0);
        out.extend_from_slice(&[(a, a, d), (b, b, d), (a, b, o), (b, a, o)]);
    }
}

/// Periodic P1 line stiffness `int c u' v'` on grid row `j`.
pub fn assemble_line_stiffness(grid: &StructuredGrid, j: usize, coeff: f64, out: &mut Triplets) {
    let h = grid.hx();
    for i in 0..grid.nx() {
        let (a, b) = (grid.node(i, j), grid.node(grid.right(i), j));
        let s = coeff / h;
        out.extend_from_slice(&[(a, a, s), (b, b, s), (a, b, -s), (b, a, -s)]);
    }
}

/// Gradient of the nodal field `u` at the four quadrature points of element `(i, j)`.
pub fn element_gradients(grid: &StructuredGrid, u: &[f64], i: usize, j: usize) -> [[f64; 2]; 4] {
    let nodes = element_nodes(grid, i, j);
    let (hx, hy) = element_size(grid, j);
    let mut out = [[0.0; 2]; 4];
    for (q, &(xi, eta)) in QUAD_POINTS.iter().enumerate() {
        let g = shape_gradients(xi, eta, hx, hy);
        for a in 0..4 {
            out[q][0] += g[a][0] * u[nodes[a]];
            out[q][1] += g[a][1] * u[nodes[a]];
        }
    }
    out
}

/// `(int u^2, int |grad u|^2)` over the whole grid, exact for Q1 fields.
pub fn l2_h1_squared(grid: &StructuredGrid, u: &[f64]) -> (f64, f64) {
    let mut l2 = 0.0;
    let mut semi = 0.0;
    for j in 0..grid.ny() - 1 {
        let (hx, hy) = element_size(grid, j);
        let jw = hx * hy * QUAD_WEIGHT;
        for i in 0..grid.nx() {
            let nodes = element_nodes(grid, i, j);
            for &(xi, eta) in QUAD_POINTS.iter() {
                let n = shape(xi, eta);
                let g = shape_gradients(xi, eta, hx, hy);
                let (mut v, mut gx, mut gy) = (0.0, 0.0, 0.0);
                for a in 0..4 {
                    let ua = u[nodes[a]];
                    v += n[a] * ua;
                    gx += g[a][0] * ua;
                    gy += g[a][1] * ua;
                }
                l2 += jw * v * v;
                semi += jw * (gx * gx + gy * gy);
            }
        }
    }
    (l2, semi)
}

/// Row sums of the consistent mass: `int phi_i` for every node of the grid.
pub fn lumped_mass(grid: &StructuredGrid) -> Vec<f64> {
    let mut w = vec![0.0; grid.node_count()];
    for j in 0..grid.ny() - 1 {
        let (hx, hy) = element_size(grid, j);
        for i in 0..grid.nx() {
            for n in element_nodes(grid, i, j) {
                w[n] += 0.25 * hx * hy;
            }
        }
    }
    w
}
