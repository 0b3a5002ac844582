//! Jacobi-preconditioned conjugate gradients for symmetric positive
//! (semi-)definite systems.

use super::{dot, norm2, CsrMatrix, NumericsError};

/// Kernel of the operator, used to make singular Neumann/periodic systems solvable.
#[derive(Debug, Clone, Copy)]
pub enum NullSpace<'a> {
    None,
    /// Constant vectors; the solution is made to have zero arithmetic mean.
    Constants,
    /// Constant vectors; the solution is made to have zero `weights`-weighted
    /// mean and the right-hand side is projected along `weights`.
    WeightedConstants(&'a [f64]),
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Re-project the iterate onto the mean-zero subspace this often.
    pub reproject_every: usize,
    pub record_history: bool,
}

impl CgOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 20_000, reproject_every: 50, record_history: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// `||b - A x|| / ||b||` with `b` after any consistency projection.
    pub relative_residual: f64,
    pub converged: bool,
    /// Pre-projection component of `b` along the kernel (zero without a kernel).
    pub consistency_defect: f64,
    #[serde(skip)]
    pub residual_history: Vec<f64>,
    /// Values of `x^T A x / 2 - b^T x` per iteration.
    #[serde(skip)]
    pub energy_history: Vec<f64>,
}

/// Removes the kernel component of `b`: `b - (sum b / sum w) w`.
pub fn project_rhs(b: &mut [f64], weights: Option<&[f64]>) -> f64 {
    let total: f64 = b.iter().sum();
    match weights {
        Some(w) => {
            let wsum: f64 = w.iter().sum();
            let s = total / wsum;
            for (bi, wi) in b.iter_mut().zip(w) {
                *bi -= s * wi;
            }
        }
        None => {
            let s = total / b.len() as f64;
            for bi in b.iter_mut() {
                *bi -= s;
            }
        }
    }
    total
}

/// Shifts `x` by a constant so that its (weighted) mean vanishes.
pub fn project_mean_zero(x: &mut [f64], weights: Option<&[f64]>) {
    let shift = weighted_mean(x, weights);
    for xi in x.iter_mut() {
        *xi -= shift;
    }
}

pub fn weighted_mean(x: &[f64], weights: Option<&[f64]>) -> f64 {
    match weights {
        Some(w) => dot(x, w) / w.iter().sum::<f64>(),
        None => x.iter().sum::<f64>() / x.len() as f64,
    }
}

/// Solves `A x = b`. Non-convergence is reported, not raised.
pub fn solve_cg(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &CgOptions,
    nullspace: NullSpace<'_>,
) -> Result<(Vec<f64>, SolveReport), NumericsError> {
    let n = b.len();
    if a.nrows() != n || a.ncols() != n {
        return Err(NumericsError::DimensionMismatch(format!("matrix {}x{}, rhs {}", a.nrows(), a.ncols(), n)));
    }
    if let Some(x0) = x0 {
        if x0.len() != n {
            return Err(NumericsError::DimensionMismatch(format!("initial guess {}, rhs {}", x0.len(), n)));
        }
    }
    let weights = match nullspace {
        NullSpace::None => None,
        NullSpace::Constants => Some(None),
        NullSpace::WeightedConstants(w) => {
            if w.len() != n {
                return Err(NumericsError::DimensionMismatch(format!("weights {}, rhs {}", w.len(), n)));
            }
            Some(Some(w))
        }
    };

    let mut rhs = b.to_vec();
    let mut report = SolveReport::default();
    if let Some(w) = weights {
        report.consistency_defect = project_rhs(&mut rhs, w);
    }
    let bnorm = norm2(&rhs);
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        report.converged = true;
        return Ok((x, report));
    }
    if let Some(w) = weights {
        project_mean_zero(&mut x, w);
    }

    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut ax = vec![0.0; n];
    a.mul_vec_into(&x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = norm2(&r) / bnorm;

    let record = |report: &mut SolveReport, x: &[f64], r: &[f64], rel: f64| {
        if opts.record_history {
            report.residual_history.push(rel);
            report.energy_history.push(-0.5 * (dot(x, &rhs) + dot(x, r)));
        }
    };
    record(&mut report, &x, &r, rel);

    let mut it = 0;
    while it < opts.max_iter {
        if rel <= opts.tol {
            // confirm with the true residual; restart from it when the recursion drifted
            a.mul_vec_into(&x, &mut ax);
            for i in 0..n {
                r[i] = rhs[i] - ax[i];
            }
            rel = norm2(&r) / bnorm;
            if rel <= opts.tol {
                break;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
        }
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        it += 1;
        if let Some(w) = weights {
            if opts.reproject_every > 0 && it % opts.reproject_every == 0 {
                project_mean_zero(&mut x, w);
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rel = norm2(&r) / bnorm;
        record(&mut report, &x, &r, rel);
    }

    if let Some(w) = weights {
        project_mean_zero(&mut x, w);
    }
    a.mul_vec_into(&x, &mut ax);
    let true_rel = rhs.iter().zip(&ax).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>().sqrt() / bnorm;
    report.iterations = it;
    report.relative_residual = true_rel;
    report.converged = true_rel <= opts.tol;
    Ok((x, report))
}
