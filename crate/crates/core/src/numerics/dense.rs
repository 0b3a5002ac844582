//! Dense Gaussian elimination. Used as an independent oracle in tests and for
//! tiny systems; never on the production solve path.

use super::NumericsError;
use std::ops::{Index, IndexMut};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, data: vec![0.0; nrows * ncols] }
    }

    pub fn from_fn(nrows: usize, ncols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(nrows, ncols);
        for i in 0..nrows {
            for j in 0..ncols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        Self::from_fn(nrows, ncols, |i, j| rows[i][j])
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| (0..self.ncols).map(|j| self[(i, j)] * x[j]).sum())
            .collect()
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.ncols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.ncols + j]
    }
}

/// Solves `A x = b` by elimination with partial pivoting.
pub fn solve_dense(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
    let n = a.nrows;
    if a.ncols != n || b.len() != n {
        return Err(NumericsError::DimensionMismatch(format!("matrix {}x{}, rhs {}", a.nrows, a.ncols, b.len())));
    }
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale = m.data.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| m[(p, col)].abs().total_cmp(&m[(q, col)].abs()))
            .unwrap();
        if m[(pivot, col)].abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            return Err(NumericsError::Singular);
        }
        if pivot != col {
            for j in 0..n {
                m.data.swap(pivot * n + j, col * n + j);
            }
            x.swap(pivot, col);
        }
        let d = m[(col, col)];
        for row in col + 1..n {
            let f = m[(row, col)] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                let v = m[(col, j)];
                m[(row, j)] -= f * v;
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for j in col + 1..n {
            s -= m[(col, j)] * x[j];
        }
        x[col] = s / m[(col, col)];
    }
    Ok(x)
}

/// Solves a singular system with kernel `span{1}` under the constraint
/// `w^T x = 0`, via the augmented system `[[A, w], [w^T, 0]]`.
pub fn solve_dense_mean_zero(a: &DenseMatrix, b: &[f64], weights: &[f64]) -> Result<Vec<f64>, NumericsError> {
    let n = a.nrows;
    if weights.len() != n {
        return Err(NumericsError::DimensionMismatch(format!("weights {}, system {}", weights.len(), n)));
    }
    let aug = DenseMatrix::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
        (true, true) => a[(i, j)],
        (true, false) => weights[i],
        (false, true) => weights[j],
        (false, false) => 0.0,
    });
    let mut rhs = b.to_vec();
    rhs.push(0.0);
    let mut x = solve_dense(&aug, &rhs)?;
    x.truncate(n);
    Ok(x)
}
