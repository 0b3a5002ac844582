//! Sampled checks of the structural assumptions on the problem data.
//!
//! Sampling lattice: 64 x 64 points in `y` (`y1 = i/64`, `y2 = -1 + 2j/63`),
//! 33 points in `z` on `[-10, 10]` and 17 in `t` on `[0, T]`.

use super::config::Scenario;
use super::expr::{Bindings, Expr, Var};
use serde::Serialize;
use std::fmt;

pub const Y_SAMPLES: usize = 64;
pub const Z_SAMPLES: usize = 33;
pub const Z_WINDOW: f64 = 10.0;
pub const T_SAMPLES: usize = 17;
pub const X_SAMPLES: usize = 64;
const PERIODICITY_TOL: f64 = 1e-9;
const COMPATIBILITY_TOL: f64 = 1e-9;
/// A Lipschitz estimate over `|z| <= 10` exceeding this multiple of the one
/// over `|z| <= 5` is taken as evidence of superlinear growth.
const LIPSCHITZ_GROWTH: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Assumption {
    /// Symmetric, coercive diffusion coefficients; periodic layer coefficient.
    A1,
    /// Bulk reactions Lipschitz in `z` and periodic in `y`.
    A2,
    /// Layer reaction Lipschitz in `z` and periodic in `y1`.
    A3,
    /// Initial data finite.
    A4,
    /// Trace compatibility of the initial data on the interface.
    A4Prime,
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::A1 => "A1",
            Self::A2 => "A2",
            Self::A3 => "A3",
            Self::A4 => "A4",
            Self::A4Prime => "A4'",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub assumption: Assumption,
    pub key: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.assumption, self.key, self.message)
    }
}

/// Quantities recorded by the sampled checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub diagnostics: Vec<Diagnostic>,
    /// Minimum eigenvalue of `D^M` over the sample (the coercivity constant).
    pub d_m_min_eigenvalue: f64,
    pub d_plus_min_eigenvalue: f64,
    pub d_minus_min_eigenvalue: f64,
    pub lipschitz_f_plus: f64,
    pub lipschitz_f_minus: f64,
    pub lipschitz_g_m: f64,
    /// Largest `|init_+-(x1, 0) - init_M(x1)|` over the sample.
    pub trace_mismatch: f64,
}

fn y_lattice() -> impl Iterator<Item = (f64, f64)> {
    (0..Y_SAMPLES).flat_map(|i| {
        (0..Y_SAMPLES).map(move |j| (i as f64 / Y_SAMPLES as f64, -1.0 + 2.0 * j as f64 / (Y_SAMPLES - 1) as f64))
    })
}

fn z_lattice() -> impl Iterator<Item = f64> {
    (0..Z_SAMPLES).map(|k| -Z_WINDOW + 2.0 * Z_WINDOW * k as f64 / (Z_SAMPLES - 1) as f64)
}

fn t_lattice(t_final: f64) -> impl Iterator<Item = f64> {
    (0..T_SAMPLES).map(move |k| t_final * k as f64 / (T_SAMPLES - 1) as f64)
}

struct Collector {
    out: Vec<Diagnostic>,
}

impl Collector {
    fn push(&mut self, assumption: Assumption, key: &str, message: String) {
        self.out.push(Diagnostic { assumption, key: key.to_string(), message });
    }
}

fn check_bulk_matrix(c: &mut Collector, key: &str, m: &[[f64; 2]; 2]) -> f64 {
    if m.iter().flatten().any(|v| !v.is_finite()) {
        c.push(Assumption::A1, key, "matrix has non-finite entries".into());
        return f64::NAN;
    }
    if m[0][1] != m[1][0] {
        c.push(Assumption::A1, key, format!("matrix is not symmetric ({} != {})", m[0][1], m[1][0]));
    }
    let t = crate::numerics::SymTensor2::new(m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    let lo = t.min_eigenvalue();
    if lo <= 0.0 {
        c.push(Assumption::A1, key, format!("matrix is not positive definite (eigenvalue {lo} <= 0)"));
    }
    lo
}

fn check_layer_coefficient(c: &mut Collector, s: &Scenario) -> f64 {
    let key = "coefficients.D_M";
    let mut lo = f64::INFINITY;
    let mut periodic_defect: f64 = 0.0;
    for (y1, y2) in y_lattice() {
        let (d, d_shift) = match (s.d_m.eval(y1, y2), s.d_m.eval(y1 + 1.0, y2)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                c.push(Assumption::A1, key, format!("evaluation failed at y = ({y1}, {y2}): {e}"));
                return f64::NAN;
            }
        };
        if !d.is_finite() {
            c.push(Assumption::A1, key, format!("non-finite value at y = ({y1}, {y2})"));
            return f64::NAN;
        }
        lo = lo.min(d.min_eigenvalue());
        periodic_defect = periodic_defect
            .max((d.xx - d_shift.xx).abs())
            .max((d.xy - d_shift.xy).abs())
            .max((d.yy - d_shift.yy).abs());
    }
    if lo <= 0.0 {
        c.push(Assumption::A1, key, format!("not coercive: minimum sampled eigenvalue {lo} <= 0"));
    }
    if periodic_defect > PERIODICITY_TOL {
        c.push(Assumption::A1, key, format!("not 1-periodic in y1 (sampled defect {periodic_defect:e})"));
    }
    lo
}

/// Largest sampled difference quotient in `z` over consecutive lattice points
/// with `|z| <= window`, the maximum over `(t, y)`.
fn lipschitz_estimate(
    c: &mut Collector,
    assumption: Assumption,
    key: &str,
    e: &Expr,
    t_final: f64,
    periodic_y2: bool,
) -> f64 {
    let ys: Vec<(f64, f64)> = if e.depends_on(Var::Y1) || e.depends_on(Var::Y2) {
        y_lattice().collect()
    } else {
        vec![(0.0, 0.0)]
    };
    let ts: Vec<f64> = if e.depends_on(Var::T) { t_lattice(t_final).collect() } else { vec![0.0] };
    let zs: Vec<f64> = z_lattice().collect();
    let (mut inner, mut full) = (0.0f64, 0.0f64);
    let mut periodic_defect = 0.0f64;
    for &t in &ts {
        for &(y1, y2) in &ys {
            let mut b = Bindings::new().with(Var::T, t).with(Var::Y1, y1).with(Var::Y2, y2);
            let mut prev: Option<f64> = None;
            for &z in &zs {
                b.set(Var::Z, z);
                let v = match e.eval(&b) {
                    Ok(v) if v.is_finite() => v,
                    Ok(_) => {
                        c.push(assumption, key, format!("non-finite value at t = {t}, y = ({y1}, {y2}), z = {z}"));
                        return f64::NAN;
                    }
                    Err(err) => {
                        c.push(assumption, key, format!("evaluation failed at t = {t}, y = ({y1}, {y2}), z = {z}: {err}"));
                        return f64::NAN;
                    }
                };
                let mut shifted = b;
                shifted.set(Var::Y1, y1 + 1.0);
                let mut defect = e.eval(&shifted).map_or(f64::INFINITY, |w| (w - v).abs());
                if periodic_y2 {
                    shifted.set(Var::Y1, y1);
                    shifted.set(Var::Y2, y2 + 1.0);
                    defect = defect.max(e.eval(&shifted).map_or(f64::INFINITY, |w| (w - v).abs()));
                }
                periodic_defect = periodic_defect.max(defect);
                if let Some(p) = prev {
                    let q = (v - p).abs() / (2.0 * Z_WINDOW / (Z_SAMPLES - 1) as f64);
                    full = full.max(q);
                    if z.abs() <= 0.5 * Z_WINDOW + 1e-12 {
                        inner = inner.max(q);
                    }
                }
                prev = Some(v);
            }
        }
    }
    if full > LIPSCHITZ_GROWTH * inner + 1e-12 {
        c.push(
            assumption,
            key,
            format!(
                "not uniformly Lipschitz in z: sampled bound grows from {inner:.6e} on |z| <= {} to {full:.6e} on |z| <= {}",
                0.5 * Z_WINDOW,
                Z_WINDOW
            ),
        );
    }
    if periodic_defect > PERIODICITY_TOL {
        let what = if periodic_y2 { "y" } else { "y1" };
        c.push(assumption, key, format!("not 1-periodic in {what} (sampled defect {periodic_defect:e})"));
    }
    full
}

fn sample_initial(c: &mut Collector, key: &str, e: &Expr, points: &[(f64, f64)]) -> Option<Vec<f64>> {
    let mut out = Vec::with_capacity(points.len());
    for &(x1, x2) in points {
        let b = Bindings::new().with(Var::X1, x1).with(Var::X2, x2);
        match e.eval(&b) {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(_) => {
                c.push(Assumption::A4, key, format!("non-finite value at x = ({x1}, {x2})"));
                return None;
            }
            Err(err) => {
                c.push(Assumption::A4, key, format!("evaluation failed at x = ({x1}, {x2}): {err}"));
                return None;
            }
        }
    }
    Some(out)
}

fn check_initial(c: &mut Collector, s: &Scenario) -> f64 {
    let len = s.geometry.sigma_len as f64;
    let h = s.geometry.height as f64;
    let xs: Vec<f64> = (0..X_SAMPLES).map(|i| len * i as f64 / X_SAMPLES as f64).collect();
    let interior = |sign: f64| -> Vec<(f64, f64)> {
        xs.iter()
            .flat_map(|&x1| (0..=16).map(move |k| (x1, sign * h * k as f64 / 16.0)))
            .collect()
    };
    sample_initial(c, "initial.init_plus", &s.init_plus, &interior(1.0));
    sample_initial(c, "initial.init_minus", &s.init_minus, &interior(-1.0));
    let on_sigma: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 0.0)).collect();
    let plus = sample_initial(c, "initial.init_plus", &s.init_plus, &on_sigma);
    let minus = sample_initial(c, "initial.init_minus", &s.init_minus, &on_sigma);
    let layer = sample_initial(c, "initial.init_M", &s.init_m, &on_sigma);
    let (Some(plus), Some(minus), Some(layer)) = (plus, minus, layer) else {
        return f64::NAN;
    };
    let mismatch = plus
        .iter()
        .zip(&minus)
        .zip(&layer)
        .fold(0.0f64, |m, ((p, q), l)| m.max((p - l).abs()).max((q - l).abs()));
    if mismatch > COMPATIBILITY_TOL {
        c.push(
            Assumption::A4Prime,
            "initial",
            format!("init_plus(x1, 0), init_M(x1) and init_minus(x1, 0) differ by up to {mismatch:e}"),
        );
    }
    mismatch
}

/// Runs every sampled check and records the estimated constants.
pub fn validation_report(s: &Scenario) -> ValidationReport {
    let mut c = Collector { out: Vec::new() };
    if !(s.t_final.is_finite() && s.t_final > 0.0) {
        c.push(Assumption::A4, "time.T", format!("final time must be positive, got {}", s.t_final));
    }
    let d_plus_min_eigenvalue = check_bulk_matrix(&mut c, "coefficients.D_plus", &s.d_plus);
    let d_minus_min_eigenvalue = check_bulk_matrix(&mut c, "coefficients.D_minus", &s.d_minus);
    let d_m_min_eigenvalue = check_layer_coefficient(&mut c, s);
    let lipschitz_f_plus = lipschitz_estimate(&mut c, Assumption::A2, "reactions.f_plus", &s.f_plus, s.t_final, true);
    let lipschitz_f_minus = lipschitz_estimate(&mut c, Assumption::A2, "reactions.f_minus", &s.f_minus, s.t_final, true);
    let lipschitz_g_m = lipschitz_estimate(&mut c, Assumption::A3, "reactions.g_M", &s.g_m, s.t_final, false);
    let trace_mismatch = check_initial(&mut c, s);
    ValidationReport {
        diagnostics: c.out,
        d_m_min_eigenvalue,
        d_plus_min_eigenvalue,
        d_minus_min_eigenvalue,
        lipschitz_f_plus,
        lipschitz_f_minus,
        lipschitz_g_m,
        trace_mismatch,
    }
}

/// Empty iff every sampled check passes.
pub fn validate(s: &Scenario) -> Vec<Diagnostic> {
    validation_report(s).diagnostics
}
