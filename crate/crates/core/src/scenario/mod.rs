//! Problem data: coefficients, reactions and initial values given as
//! expressions in a small configuration language.

pub mod config;
pub mod expr;
pub mod parser;
pub mod validate;

pub use config::{parse_unchecked, print_scenario, ConfigError, LayerCoefficient, Scenario, StudySettings};
pub use expr::{Bindings, EvalError, Expr, Var};
pub use parser::{parse_expression, SyntaxError, SyntaxErrorKind};
pub use validate::{validate, validation_report, Assumption, Diagnostic, ValidationReport};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scenario violates its assumptions:\n{}", format_diagnostics(.0))]
    Validation(Vec<Diagnostic>),
}

fn format_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

/// Parses a document and runs the sampled assumption checks.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let s = parse_unchecked(text)?;
    let diagnostics = validate(&s);
    if diagnostics.is_empty() {
        Ok(s)
    } else {
        Err(ScenarioError::Validation(diagnostics))
    }
}
