//! Recursive-descent parser for the expression DSL.
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | 'pi' | variable | function '(' expr (',' expr)* ')' | '(' expr ')'
//! ```

use super::expr::{BinOp, Expr, Func, Var};
use std::fmt;
use thiserror::Error;

const MAX_DEPTH: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyntaxErrorKind {
    UnexpectedChar(char),
    UnexpectedToken { found: String, expected: &'static str },
    UnexpectedEnd { expected: &'static str },
    UnknownVariable(String),
    DisallowedVariable { name: String, allowed: String },
    UnknownFunction(String),
    WrongArity { function: &'static str, expected: usize, found: usize },
    InvalidNumber(String),
    TooDeep,
}

impl fmt::Display for SyntaxErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnexpectedChar(c) => write!(f, "unexpected character `{c}`"),
            Self::UnexpectedToken { found, expected } => write!(f, "expected {expected}, found `{found}`"),
            Self::UnexpectedEnd { expected } => write!(f, "expected {expected}, found end of input"),
            Self::UnknownVariable(name) => write!(f, "unknown variable `{name}`"),
            Self::DisallowedVariable { name, allowed } => {
                write!(f, "variable `{name}` is not allowed here (allowed: {allowed})")
            }
            Self::UnknownFunction(name) => write!(f, "unknown function `{name}`"),
            Self::WrongArity { function, expected, found } => {
                write!(f, "`{function}` takes {expected} argument(s), got {found}")
            }
            Self::InvalidNumber(s) => write!(f, "invalid number `{s}`"),
            Self::TooDeep => write!(f, "expression nested too deeply"),
        }
    }
}

/// A syntax error with a 1-based line and column (columns count characters).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {kind}")]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub kind: SyntaxErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

impl Tok {
    fn text(&self) -> String {
        match self {
            Tok::Num(v) => v.to_string(),
            Tok::Ident(s) => s.clone(),
            Tok::Op(c) => c.to_string(),
            Tok::LParen => "(".into(),
            Tok::RParen => ")".into(),
            Tok::Comma => ",".into(),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, (usize, SyntaxErrorKind)> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut k = 0;
    while k < chars.len() {
        let c = chars[k];
        let col = k + 1;
        if c == ' ' || c == '\t' {
            k += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = k;
            while k < chars.len() && (chars[k].is_ascii_digit() || chars[k] == '.') {
                k += 1;
            }
            if k < chars.len() && (chars[k] == 'e' || chars[k] == 'E') {
                let mut m = k + 1;
                if m < chars.len() && (chars[m] == '+' || chars[m] == '-') {
                    m += 1;
                }
                if m < chars.len() && chars[m].is_ascii_digit() {
                    k = m;
                    while k < chars.len() && chars[k].is_ascii_digit() {
                        k += 1;
                    }
                }
            }
            let text: String = chars[start..k].iter().collect();
            let mantissa = text.split(['e', 'E']).next().unwrap_or("");
            let ok = mantissa.matches('.').count() <= 1 && mantissa.chars().any(|c| c.is_ascii_digit());
            match text.parse::<f64>() {
                Ok(v) if ok && v.is_finite() => out.push((Tok::Num(v), col)),
                _ => return Err((col, SyntaxErrorKind::InvalidNumber(text))),
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = k;
            while k < chars.len() && (chars[k].is_ascii_alphanumeric() || chars[k] == '_') {
                k += 1;
            }
            out.push((Tok::Ident(chars[start..k].iter().collect()), col));
            continue;
        }
        let tok = match c {
            '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            _ => return Err((col, SyntaxErrorKind::UnexpectedChar(c))),
        };
        out.push((tok, col));
        k += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end_col: usize,
    allowed: &'a [Var],
    depth: usize,
}

type PResult<T> = Result<T, (usize, SyntaxErrorKind)>;

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.1)
    }

    fn unexpected(&self, expected: &'static str) -> (usize, SyntaxErrorKind) {
        match self.peek() {
            Some(t) => (self.col(), SyntaxErrorKind::UnexpectedToken { found: t.text(), expected }),
            None => (self.end_col, SyntaxErrorKind::UnexpectedEnd { expected }),
        }
    }

    fn descend(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err((self.col(), SyntaxErrorKind::TooDeep));
        }
        Ok(())
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.descend()?;
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            self.descend()?;
            let e = self.unary()?;
            self.depth -= 1;
            return Ok(Expr::Neg(Box::new(e)));
        }
        self.power()
    }

    fn power(&mut self) -> PResult<Expr> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            self.descend()?;
            let exp = self.unary()?;
            self.depth -= 1;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> PResult<Expr> {
        let col = self.col();
        let Some(tok) = self.peek().cloned() else {
            return Err(self.unexpected("an operand"));
        };
        match tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.pos += 1;
                if let Some(Tok::LParen) = self.peek() {
                    let func = Func::from_name(&name).ok_or((col, SyntaxErrorKind::UnknownFunction(name)))?;
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while let Some(Tok::Comma) = self.peek() {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect_rparen()?;
                    if args.len() != func.arity() {
                        return Err((
                            col,
                            SyntaxErrorKind::WrongArity { function: func.name(), expected: func.arity(), found: args.len() },
                        ));
                    }
                    return Ok(Expr::Call(func, args));
                }
                if name == "pi" {
                    return Ok(Expr::Pi);
                }
                if Func::from_name(&name).is_some() {
                    return Err(self.unexpected("`(` after function name"));
                }
                let var = Var::from_name(&name).ok_or_else(|| (col, SyntaxErrorKind::UnknownVariable(name.clone())))?;
                if !self.allowed.contains(&var) {
                    let allowed = self.allowed.iter().map(|v| v.name()).collect::<Vec<_>>().join(", ");
                    return Err((col, SyntaxErrorKind::DisallowedVariable { name, allowed }));
                }
                Ok(Expr::Var(var))
            }
            _ => Err(self.unexpected("an operand")),
        }
    }

    fn expect_rparen(&mut self) -> PResult<()> {
        match self.peek() {
            Some(Tok::RParen) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.unexpected("`)`")),
        }
    }
}

/// Parses a single-line expression. Errors are reported at line 1.
pub fn parse_expression(src: &str, allowed: &[Var]) -> Result<Expr, SyntaxError> {
    parse_at(src, allowed, 1, 1)
}

/// Parses an expression that starts at (`line`, `column`) of an enclosing
/// document; error positions are translated into document coordinates.
pub fn parse_at(src: &str, allowed: &[Var], line: usize, column: usize) -> Result<Expr, SyntaxError> {
    let err = |(col, kind): (usize, SyntaxErrorKind)| SyntaxError { line, column: column + col - 1, kind };
    let toks = tokenize(src).map_err(err)?;
    let mut p = Parser { toks, pos: 0, end_col: src.chars().count() + 1, allowed, depth: 0 };
    let e = p.expr().map_err(err)?;
    if p.pos < p.toks.len() {
        return Err(err(p.unexpected("an operator or end of input")));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err(src: &str) -> (usize, SyntaxErrorKind) {
        let e = parse_expression(src, &Var::ALL).unwrap_err();
        assert_eq!(e.line, 1);
        (e.column, e.kind)
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse_expression("1 - 2 - 3 * 4 / 2", &Var::ALL).unwrap();
        assert_eq!(e.eval(&Default::default()).unwrap(), -7.0);
        let e = parse_expression("2^3^2", &Var::ALL).unwrap();
        assert_eq!(e.eval(&Default::default()).unwrap(), 512.0);
        let e = parse_expression("-2^2", &Var::ALL).unwrap();
        assert_eq!(e.eval(&Default::default()).unwrap(), -4.0);
    }

    #[test]
    fn numbers() {
        for (s, v) in [("1", 1.0), ("2.5", 2.5), ("1e-3", 1e-3), ("3E2", 300.0), (".5", 0.5), ("4.", 4.0)] {
            assert_eq!(parse_expression(s, &[]).unwrap(), Expr::Num(v), "{s}");
        }
        assert_eq!(err("1.2.3").1, SyntaxErrorKind::InvalidNumber("1.2.3".into()));
        assert_eq!(err("1e999").1, SyntaxErrorKind::InvalidNumber("1e999".into()));
    }

    #[test]
    fn unknown_variable_is_named() {
        let e = parse_expression("z*q", &[Var::T, Var::Y1, Var::Y2, Var::Z]).unwrap_err();
        assert_eq!((e.column, e.kind.clone()), (3, SyntaxErrorKind::UnknownVariable("q".into())));
        assert!(e.to_string().contains("`q`"));
    }

    #[test]
    fn disallowed_variable() {
        let e = parse_expression("x1 + y1", &[Var::Y1, Var::Y2]).unwrap_err();
        assert_eq!(e.column, 1);
        assert!(matches!(e.kind, SyntaxErrorKind::DisallowedVariable { ref name, .. } if name == "x1"));
    }

    #[test]
    fn positions() {
        assert_eq!(err("1 + $").0, 5);
        assert_eq!(err("(1 + 2").1, SyntaxErrorKind::UnexpectedEnd { expected: "`)`" });
        assert_eq!(err("(1 + 2").0, 7);
        assert_eq!(err("1 2").0, 3);
        assert_eq!(err("foo(1)").1, SyntaxErrorKind::UnknownFunction("foo".into()));
        assert_eq!(
            err("  min(1)"),
            (3, SyntaxErrorKind::WrongArity { function: "min", expected: 2, found: 1 })
        );
        assert_eq!(err("sin + 1").0, 5);
    }

    #[test]
    fn offset_translation() {
        let e = parse_at("1 + ?", &Var::ALL, 7, 12).unwrap_err();
        assert_eq!((e.line, e.column), (7, 16));
    }

    #[test]
    fn deep_nesting_is_rejected_not_overflowed() {
        let src = format!("{}1{}", "(".repeat(500), ")".repeat(500));
        assert_eq!(err(&src).1, SyntaxErrorKind::TooDeep);
        let src = format!("{}1", "-".repeat(500));
        assert_eq!(err(&src).1, SyntaxErrorKind::TooDeep);
    }
}
