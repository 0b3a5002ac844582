//! The scenario document: a line-oriented `key = value` format with sections.
//! See `docs/scenario-format.md` for the grammar.

use super::expr::{Bindings, EvalError, Expr, Var};
use super::parser::{parse_at, SyntaxError};
use crate::geometry::LayerGeometry;
use crate::numerics::SymTensor2;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

pub const D_M_VARS: &[Var] = &[Var::Y1, Var::Y2];
pub const REACTION_VARS: &[Var] = &[Var::T, Var::Y1, Var::Y2, Var::Z];
pub const BULK_INIT_VARS: &[Var] = &[Var::X1, Var::X2];
pub const LAYER_INIT_VARS: &[Var] = &[Var::X1];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("`{key}`: {source}")]
    Expression { key: String, source: SyntaxError },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}, column {column}: `{key}`: {message}")]
    InvalidValue { line: usize, column: usize, key: String, message: String },
    #[error("missing required key `{0}`")]
    MissingKey(String),
}

impl ConfigError {
    /// `(line, column)` of the error, when it has one.
    pub fn position(&self) -> Option<(usize, usize)> {
        match self {
            Self::Syntax { line, column, .. } | Self::InvalidValue { line, column, .. } => Some((*line, *column)),
            Self::Expression { source, .. } => Some((source.line, source.column)),
            Self::UnknownKey { line, .. } | Self::DuplicateKey { line, .. } => Some((*line, 1)),
            Self::MissingKey(_) => None,
        }
    }
}

/// `D^M(y)`: either a scalar multiple of the identity or three tensor entries.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerCoefficient {
    Scalar(Expr),
    Tensor { d11: Expr, d12: Expr, d22: Expr },
}

impl LayerCoefficient {
    pub fn eval(&self, y1: f64, y2: f64) -> Result<SymTensor2, EvalError> {
        let b = Bindings::new().with(Var::Y1, y1).with(Var::Y2, y2);
        Ok(match self {
            Self::Scalar(e) => SymTensor2::scalar(e.eval(&b)?),
            Self::Tensor { d11, d12, d22 } => SymTensor2::new(d11.eval(&b)?, d12.eval(&b)?, d22.eval(&b)?),
        })
    }

    pub fn entries(&self) -> Vec<(&'static str, &Expr)> {
        match self {
            Self::Scalar(e) => vec![("D_M", e)],
            Self::Tensor { d11, d12, d22 } => vec![("D_M_11", d11), ("D_M_12", d12), ("D_M_22", d22)],
        }
    }

    pub fn depends_on(&self, v: Var) -> bool {
        self.entries().iter().any(|(_, e)| e.depends_on(v))
    }
}

/// Parameters of the convergence study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySettings {
    /// Inverse epsilons, in document order.
    pub inv_epsilons: Vec<u32>,
    /// Grid intervals per period / per unit length of the cell.
    pub resolution: usize,
    /// Truncation length of the boundary-layer stripes.
    pub stripe_length: usize,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self { inv_epsilons: vec![4, 8, 16, 32], resolution: 4, stripe_length: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub geometry: LayerGeometry,
    /// Bulk diffusion matrices as written (symmetry is checked by validation).
    pub d_plus: [[f64; 2]; 2],
    pub d_minus: [[f64; 2]; 2],
    pub d_m: LayerCoefficient,
    pub f_plus: Expr,
    pub f_minus: Expr,
    pub g_m: Expr,
    pub init_plus: Expr,
    pub init_minus: Expr,
    pub init_m: Expr,
    pub t_final: f64,
    pub dt: Option<f64>,
    pub study: StudySettings,
}

fn sym(m: &[[f64; 2]; 2]) -> SymTensor2 {
    SymTensor2::new(m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1])
}

impl Scenario {
    pub fn d_plus_tensor(&self) -> SymTensor2 {
        sym(&self.d_plus)
    }

    pub fn d_minus_tensor(&self) -> SymTensor2 {
        sym(&self.d_minus)
    }

    /// The named expressions of the document, in printing order.
    pub fn expressions(&self) -> Vec<(String, &Expr)> {
        let mut out: Vec<(String, &Expr)> =
            self.d_m.entries().into_iter().map(|(k, e)| (format!("coefficients.{k}"), e)).collect();
        out.extend([
            ("reactions.f_plus".to_string(), &self.f_plus),
            ("reactions.f_minus".to_string(), &self.f_minus),
            ("reactions.g_M".to_string(), &self.g_m),
            ("initial.init_plus".to_string(), &self.init_plus),
            ("initial.init_minus".to_string(), &self.init_minus),
            ("initial.init_M".to_string(), &self.init_m),
        ]);
        out
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
    column: usize,
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("geometry", &["H", "sigma_len", "epsilon"]),
    ("coefficients", &["D_plus", "D_minus", "D_M", "D_M_11", "D_M_12", "D_M_22"]),
    ("reactions", &["f_plus", "f_minus", "g_M"]),
    ("initial", &["init_plus", "init_minus", "init_M"]),
    ("time", &["T", "dt"]),
    ("study", &["epsilons", "resolution", "stripe_length"]),
];

/// Position of the first character of `s` that is not a space or tab.
fn skip_ws(chars: &[char], mut k: usize) -> usize {
    while k < chars.len() && (chars[k] == ' ' || chars[k] == '\t') {
        k += 1;
    }
    k
}

fn split_document(text: &str) -> Result<BTreeMap<String, Entry>, ConfigError> {
    let mut entries = BTreeMap::new();
    let mut section: Option<&'static str> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let chars: Vec<char> = raw.trim_end_matches('\r').chars().collect();
        // strip a comment that is not inside a quoted string
        let mut end = chars.len();
        let mut quoted = false;
        for (k, &c) in chars.iter().enumerate() {
            match c {
                '"' => quoted = !quoted,
                '#' if !quoted => {
                    end = k;
                    break;
                }
                _ => {}
            }
        }
        let chars = &chars[..end];
        let start = skip_ws(chars, 0);
        let mut stop = chars.len();
        while stop > start && (chars[stop - 1] == ' ' || chars[stop - 1] == '\t') {
            stop -= 1;
        }
        if start == stop {
            continue;
        }
        if chars[start] == '[' {
            if chars[stop - 1] != ']' {
                return Err(ConfigError::Syntax { line, column: stop + 1, message: "expected `]`".into() });
            }
            let name: String = chars[start + 1..stop - 1].iter().collect::<String>().trim().to_string();
            match SECTIONS.iter().find(|(s, _)| *s == name) {
                Some((s, _)) => section = Some(s),
                None => {
                    return Err(ConfigError::Syntax {
                        line,
                        column: start + 1,
                        message: format!("unknown section `[{name}]`"),
                    })
                }
            }
            continue;
        }
        let Some(eq) = chars[start..stop].iter().position(|&c| c == '=').map(|p| p + start) else {
            return Err(ConfigError::Syntax { line, column: stop + 1, message: "expected `=`".into() });
        };
        let key: String = chars[start..eq].iter().collect::<String>().trim_end().to_string();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(ConfigError::Syntax { line, column: start + 1, message: format!("invalid key `{key}`") });
        }
        let Some(sec) = section else {
            return Err(ConfigError::Syntax {
                line,
                column: start + 1,
                message: format!("key `{key}` appears before any section header"),
            });
        };
        let known = SECTIONS.iter().find(|(s, _)| *s == sec).unwrap().1;
        if !known.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { line, key: format!("{sec}.{key}") });
        }
        let vstart = skip_ws(chars, eq + 1);
        if vstart >= stop {
            return Err(ConfigError::Syntax { line, column: stop + 1, message: format!("missing value for `{key}`") });
        }
        let path = format!("{sec}.{key}");
        let entry = Entry { value: chars[vstart..stop].iter().collect(), line, column: vstart + 1 };
        if entries.insert(path.clone(), entry).is_some() {
            return Err(ConfigError::DuplicateKey { line, key: path });
        }
    }
    Ok(entries)
}

struct Doc {
    entries: BTreeMap<String, Entry>,
}

impl Doc {
    fn invalid(e: &Entry, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::InvalidValue { line: e.line, column: e.column, key: key.to_string(), message: message.into() }
    }

    fn expr(&self, key: &str, allowed: &[Var], default: Option<&str>) -> Result<Expr, ConfigError> {
        let Some(e) = self.entries.get(key) else {
            return match default {
                Some(d) => Ok(parse_at(d, allowed, 1, 1).expect("valid default")),
                None => Err(ConfigError::MissingKey(key.to_string())),
            };
        };
        let body = e
            .value
            .strip_prefix('"')
            .ok_or_else(|| Self::invalid(e, key, "expression values must be double-quoted strings"))?;
        let Some(body) = body.strip_suffix('"') else {
            return Err(ConfigError::Syntax {
                line: e.line,
                column: e.column + e.value.chars().count(),
                message: "unterminated string".into(),
            });
        };
        if body.contains('"') {
            let k = body.find('"').unwrap();
            return Err(ConfigError::Syntax {
                line: e.line,
                column: e.column + 1 + body[..k].chars().count(),
                message: "unexpected `\"` inside expression".into(),
            });
        }
        parse_at(body, allowed, e.line, e.column + 1)
            .map_err(|source| ConfigError::Expression { key: key.to_string(), source })
    }

    fn number(&self, key: &str, default: Option<f64>) -> Result<f64, ConfigError> {
        match self.entries.get(key) {
            None => default.ok_or_else(|| ConfigError::MissingKey(key.to_string())),
            Some(e) => parse_real(&e.value).ok_or_else(|| Self::invalid(e, key, format!("`{}` is not a number", e.value))),
        }
    }

    fn integer(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(e) => e
                .value
                .parse::<u64>()
                .map_err(|_| Self::invalid(e, key, format!("`{}` is not a non-negative integer", e.value))),
        }
    }

    fn matrix(&self, key: &str) -> Result<[[f64; 2]; 2], ConfigError> {
        match self.entries.get(key) {
            None => Ok([[1.0, 0.0], [0.0, 1.0]]),
            Some(e) => parse_matrix(&e.value).ok_or_else(|| {
                Self::invalid(e, key, format!("`{}` is not a 2x2 matrix of the form [[a, b], [c, d]]", e.value))
            }),
        }
    }
}

/// A decimal number or a ratio `p/q` of decimals.
pub fn parse_real(s: &str) -> Option<f64> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((p, q)) => {
            let (p, q) = (p.trim().parse::<f64>().ok()?, q.trim().parse::<f64>().ok()?);
            if q == 0.0 {
                return None;
            }
            p / q
        }
        None => s.parse::<f64>().ok()?,
    };
    v.is_finite().then_some(v)
}

/// Inverse of a value `1/q` or `eps` with `1/eps` integral.
fn parse_inverse_epsilon(s: &str) -> Result<u32, String> {
    let v = parse_real(s).ok_or_else(|| format!("`{s}` is not a number"))?;
    crate::geometry::inverse_epsilon(v).map_err(|e| e.to_string())
}

fn parse_matrix(s: &str) -> Option<[[f64; 2]; 2]> {
    let inner = s.trim().strip_prefix('[')?.strip_suffix(']')?.trim();
    let mut rows = Vec::new();
    let mut rest = inner;
    while !rest.is_empty() {
        let r = rest.strip_prefix('[')?;
        let close = r.find(']')?;
        let vals: Option<Vec<f64>> = r[..close].split(',').map(|v| v.trim().parse::<f64>().ok()).collect();
        let vals = vals?;
        if vals.len() != 2 || vals.iter().any(|v| !v.is_finite()) {
            return None;
        }
        rows.push([vals[0], vals[1]]);
        rest = r[close + 1..].trim_start();
        if let Some(r) = rest.strip_prefix(',') {
            rest = r.trim_start();
            if rest.is_empty() {
                return None;
            }
        } else if !rest.is_empty() {
            return None;
        }
    }
    (rows.len() == 2).then(|| [rows[0], rows[1]])
}

fn positive_u32(doc: &Doc, key: &str, default: u64) -> Result<u32, ConfigError> {
    let v = doc.integer(key, default)?;
    if v == 0 || v > u32::MAX as u64 {
        let e = &doc.entries[key];
        return Err(Doc::invalid(e, key, "must be a positive integer"));
    }
    Ok(v as u32)
}

/// Parses a document without running the sampled assumption checks.
pub fn parse_unchecked(text: &str) -> Result<Scenario, ConfigError> {
    let doc = Doc { entries: split_document(text)? };

    let height = positive_u32(&doc, "geometry.H", 1)?;
    let sigma_len = positive_u32(&doc, "geometry.sigma_len", 1)?;
    let inv_epsilon = match doc.entries.get("geometry.epsilon") {
        None => 4,
        Some(e) => parse_inverse_epsilon(&e.value).map_err(|m| Doc::invalid(e, "geometry.epsilon", m))?,
    };
    let geometry = LayerGeometry::from_inv_epsilon(height, sigma_len, inv_epsilon).map_err(|err| {
        let e = doc.entries.get("geometry.epsilon");
        ConfigError::InvalidValue {
            line: e.map_or(0, |e| e.line),
            column: e.map_or(0, |e| e.column),
            key: "geometry".into(),
            message: err.to_string(),
        }
    })?;

    let has_scalar = doc.entries.contains_key("coefficients.D_M");
    let tensor_keys = ["coefficients.D_M_11", "coefficients.D_M_12", "coefficients.D_M_22"];
    let has_tensor = tensor_keys.iter().any(|k| doc.entries.contains_key(*k));
    let d_m = match (has_scalar, has_tensor) {
        (true, true) => {
            let e = &doc.entries["coefficients.D_M"];
            return Err(Doc::invalid(e, "coefficients.D_M", "give either D_M or D_M_11/D_M_12/D_M_22, not both"));
        }
        (true, false) => LayerCoefficient::Scalar(doc.expr("coefficients.D_M", D_M_VARS, None)?),
        (false, true) => LayerCoefficient::Tensor {
            d11: doc.expr(tensor_keys[0], D_M_VARS, None)?,
            d12: doc.expr(tensor_keys[1], D_M_VARS, Some("0"))?,
            d22: doc.expr(tensor_keys[2], D_M_VARS, None)?,
        },
        (false, false) => return Err(ConfigError::MissingKey("coefficients.D_M".into())),
    };

    let t_final = doc.number("time.T", Some(0.25))?;
    if !(t_final > 0.0) {
        return Err(Doc::invalid(&doc.entries["time.T"], "time.T", "must be positive"));
    }
    let dt = match doc.entries.get("time.dt") {
        None => None,
        Some(e) => {
            let v = doc.number("time.dt", None)?;
            if !(v > 0.0 && v <= t_final) {
                return Err(Doc::invalid(e, "time.dt", "must satisfy 0 < dt <= T"));
            }
            Some(v)
        }
    };

    let mut study = StudySettings::default();
    if let Some(e) = doc.entries.get("study.epsilons") {
        study.inv_epsilons = e
            .value
            .split(',')
            .map(|s| parse_inverse_epsilon(s.trim()))
            .collect::<Result<_, _>>()
            .map_err(|m| Doc::invalid(e, "study.epsilons", m))?;
    }
    study.resolution = doc.integer("study.resolution", 4)? as usize;
    if study.resolution < 2 {
        return Err(Doc::invalid(&doc.entries["study.resolution"], "study.resolution", "must be at least 2"));
    }
    study.stripe_length = doc.integer("study.stripe_length", 8)? as usize;
    if study.stripe_length < 2 {
        return Err(Doc::invalid(&doc.entries["study.stripe_length"], "study.stripe_length", "must be at least 2"));
    }

    Ok(Scenario {
        geometry,
        d_plus: doc.matrix("coefficients.D_plus")?,
        d_minus: doc.matrix("coefficients.D_minus")?,
        d_m,
        f_plus: doc.expr("reactions.f_plus", REACTION_VARS, Some("0"))?,
        f_minus: doc.expr("reactions.f_minus", REACTION_VARS, Some("0"))?,
        g_m: doc.expr("reactions.g_M", REACTION_VARS, Some("0"))?,
        init_plus: doc.expr("initial.init_plus", BULK_INIT_VARS, Some("0"))?,
        init_minus: doc.expr("initial.init_minus", BULK_INIT_VARS, Some("0"))?,
        init_m: doc.expr("initial.init_M", LAYER_INIT_VARS, Some("0"))?,
        t_final,
        dt,
        study,
    })
}

fn write_matrix(m: &[[f64; 2]; 2]) -> String {
    format!("[[{}, {}], [{}, {}]]", m[0][0], m[0][1], m[1][0], m[1][1])
}

/// Prints a complete document that parses back to an equal scenario.
pub fn print_scenario(s: &Scenario) -> String {
    let mut out = String::new();
    let g = &s.geometry;
    let _ = writeln!(out, "[geometry]\nH = {}\nsigma_len = {}\nepsilon = 1/{}\n", g.height, g.sigma_len, g.inv_epsilon);
    let _ = writeln!(out, "[coefficients]\nD_plus = {}\nD_minus = {}", write_matrix(&s.d_plus), write_matrix(&s.d_minus));
    for (key, e) in s.d_m.entries() {
        let _ = writeln!(out, "{key} = \"{e}\"");
    }
    let _ = writeln!(
        out,
        "\n[reactions]\nf_plus = \"{}\"\nf_minus = \"{}\"\ng_M = \"{}\"\n",
        s.f_plus, s.f_minus, s.g_m
    );
    let _ = writeln!(
        out,
        "[initial]\ninit_plus = \"{}\"\ninit_minus = \"{}\"\ninit_M = \"{}\"\n",
        s.init_plus, s.init_minus, s.init_m
    );
    let _ = writeln!(out, "[time]\nT = {}", s.t_final);
    if let Some(dt) = s.dt {
        let _ = writeln!(out, "dt = {dt}");
    }
    let eps: Vec<String> = s.study.inv_epsilons.iter().map(|q| format!("1/{q}")).collect();
    let _ = write!(
        out,
        "\n[study]\nepsilons = {}\nresolution = {}\nstripe_length = {}\n",
        eps.join(", "),
        s.study.resolution,
        s.study.stripe_length
    );
    out
}
