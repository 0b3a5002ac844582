//! Sparse linear algebra and the small dense helpers around it.

pub mod cg;
pub mod dense;
pub mod sparse;

pub use cg::{solve_cg, CgOptions, NullSpace, SolveReport};
pub use dense::{solve_dense, solve_dense_mean_zero, DenseMatrix};
pub use sparse::CsrMatrix;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("triplet ({row}, {col}) outside a {nrows}x{ncols} matrix")]
    IndexOutOfRange { row: usize, col: usize, nrows: usize, ncols: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is singular")]
    Singular,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Symmetric 2x2 tensor `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SymTensor2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl SymTensor2 {
    pub const IDENTITY: SymTensor2 = SymTensor2 { xx: 1.0, xy: 0.0, yy: 1.0 };
    pub const ZERO: SymTensor2 = SymTensor2 { xx: 0.0, xy: 0.0, yy: 0.0 };

    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn scalar(a: f64) -> Self {
        Self { xx: a, xy: 0.0, yy: a }
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.xx * v[0] + self.xy * v[1], self.xy * v[0] + self.yy * v[1]]
    }

    /// `(a . T b)`
    pub fn inner(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let tb = self.apply(b);
        a[0] * tb[0] + a[1] * tb[1]
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.xx + self.yy);
        let dev = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        (mean - dev, mean + dev)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().0
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { xx: s * self.xx, xy: s * self.xy, yy: s * self.yy }
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite()
    }
}
