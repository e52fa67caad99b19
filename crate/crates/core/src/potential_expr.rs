//! Coefficient functions `φ(t)` written in a small arithmetic language.
//!
//! Grammar (whitespace is ignored between tokens):
//!
//! ```text
//! expr  := term (('+'|'-') term)*
//! term  := factor (('*'|'/') factor)*
//! factor:= ('-')? power
//! power := atom ('^' factor)?
//! atom  := NUMBER | 't' | 'pi' | FUNC '(' expr ')' | '(' expr ')'
//! FUNC  := sin | cos | tan | exp | log | sqrt | abs
//! ```
//!
//! `^` binds tighter than unary minus, so `-2^2 == -4`, and is right-associative.

use std::f64::consts::PI;
use std::fmt;

use thiserror::Error;

/// Number of samples used by the finiteness check at construction.
const FINITE_CHECK_SAMPLES: usize = 1001;

/// Default sample count for [`validate_nonneg`].
pub const DEFAULT_VALIDATION_SAMPLES: usize = 10_001;

/// Absolute tolerance for the sign test in [`validate_nonneg`].
pub const NONNEG_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier '{name}' at offset {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("empty expression")]
    Empty,
    #[error("invalid interval [{a}, {b}]: need finite a < b")]
    InvalidInterval { a: f64, b: f64 },
    #[error("expression is not finite at t = {t}: {source}")]
    NotFinite { t: f64, source: EvalError },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{func}({arg}) is outside the function's domain")]
    Domain { func: &'static str, arg: f64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result of {op}")]
    NonFinite { op: &'static str },
    #[error("evaluation point t = {0} is not finite")]
    BadPoint(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn apply(self, x: f64) -> Result<f64, EvalError> {
        let y = match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Exp => x.exp(),
            Func::Log => {
                if x <= 0.0 {
                    return Err(EvalError::Domain { func: "log", arg: x });
                }
                x.ln()
            }
            Func::Sqrt => {
                if x < 0.0 {
                    return Err(EvalError::Domain { func: "sqrt", arg: x });
                }
                x.sqrt()
            }
            Func::Abs => x.abs(),
        };
        if y.is_finite() {
            Ok(y)
        } else {
            Err(EvalError::NonFinite { op: self.name() })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

/// Expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var,
    Pi,
    Neg(Box<Expr>),
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Call { func: Func, arg: Box<Expr> },
}

impl Expr {
    pub fn eval(&self, t: f64) -> Result<f64, EvalError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var => Ok(t),
            Expr::Pi => Ok(PI),
            Expr::Neg(e) => Ok(-e.eval(t)?),
            Expr::Call { func, arg } => func.apply(arg.eval(t)?),
            Expr::Binary { op, lhs, rhs } => {
                let l = lhs.eval(t)?;
                let r = rhs.eval(t)?;
                let (v, name) = match op {
                    BinOp::Add => (l + r, "+"),
                    BinOp::Sub => (l - r, "-"),
                    BinOp::Mul => (l * r, "*"),
                    BinOp::Div => {
                        if r == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        (l / r, "/")
                    }
                    BinOp::Pow => (pow(l, r), "^"),
                };
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(EvalError::NonFinite { op: name })
                }
            }
        }
    }
}

// Integer exponents go through powi: it is exact for squares, which dominate
// the coefficient functions in practice.
fn pow(base: f64, exp: f64) -> f64 {
    if exp.fract() == 0.0 && exp.abs() <= i32::MAX as f64 {
        base.powi(exp as i32)
    } else {
        base.powf(exp)
    }
}

/// Fully parenthesised rendering; re-parsing it yields the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var => f.write_str("t"),
            Expr::Pi => f.write_str("pi"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary { op, lhs, rhs } => write!(f, "({lhs}{}{rhs})", op.symbol()),
            Expr::Call { func, arg } => write!(f, "{}({arg})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                out.push((i, Tok::Op(c as char)));
                i += 1;
            }
            b'(' => {
                out.push((i, Tok::LParen));
                i += 1;
            }
            b')' => {
                out.push((i, Tok::RParen));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // optional exponent: e[+-]digits
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    message: format!("malformed number '{text}'"),
                })?;
                out.push((start, Tok::Num(value)));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(src[start..i].to_string())));
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    offset: i,
                    message: format!("unexpected character '{ch}'"),
                });
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax { offset: self.offset(), message: message.into() })
    }

    fn eat_op(&mut self, ops: &[char]) -> Option<char> {
        match self.peek() {
            Some(Tok::Op(c)) if ops.contains(c) => {
                let c = *c;
                self.pos += 1;
                Some(c)
            }
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(c) = self.eat_op(&['+', '-']) {
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        while let Some(c) = self.eat_op(&['*', '/']) {
            let rhs = self.factor()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) };
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if self.eat_op(&['-']).is_some() {
            Ok(Expr::Neg(Box::new(self.power()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat_op(&['^']).is_some() {
            let exp = self.factor()?;
            Ok(Expr::Binary { op: BinOp::Pow, lhs: Box::new(base), rhs: Box::new(exp) })
        } else {
            Ok(base)
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::RParen) => {
                self.pos += 1;
                Ok(())
            }
            _ => self.syntax("expected ')'"),
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "t" => Ok(Expr::Var),
                    "pi" => Ok(Expr::Pi),
                    other => {
                        let Some(func) = Func::from_name(other) else {
                            return Err(ParseError::UnknownIdentifier { offset, name });
                        };
                        if self.peek() != Some(&Tok::LParen) {
                            return self.syntax(format!("expected '(' after {other}"));
                        }
                        self.pos += 1;
                        let arg = self.expr()?;
                        self.expect_rparen()?;
                        Ok(Expr::Call { func, arg: Box::new(arg) })
                    }
                }
            }
            Some(_) => self.syntax("expected a number, 't', 'pi', a function or '('"),
            None => self.syntax("unexpected end of input"),
        }
    }
}

/// Parses an expression without attaching an interval.
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    if src.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let toks = tokenize(src)?;
    let mut p = Parser { toks, pos: 0, end: src.len() };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return p.syntax("unexpected trailing input");
    }
    Ok(e)
}

/// Anything that can act as the coefficient `φ(t)` on an interval.
pub trait Coefficient: Send + Sync {
    fn interval(&self) -> (f64, f64);
    fn value(&self, t: f64) -> Result<f64, EvalError>;
}

impl<C: Coefficient + ?Sized> Coefficient for &C {
    fn interval(&self) -> (f64, f64) {
        (**self).interval()
    }
    fn value(&self, t: f64) -> Result<f64, EvalError> {
        (**self).value(t)
    }
}

/// A parsed coefficient function together with its interval `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    source: String,
    ast: Expr,
    a: f64,
    b: f64,
}

impl PotentialSpec {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Same function on a different interval.
    pub fn with_interval(&self, a: f64, b: f64) -> Result<Self, ParseError> {
        build(self.source.clone(), self.ast.clone(), a, b)
    }
}

impl Coefficient for PotentialSpec {
    fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    fn value(&self, t: f64) -> Result<f64, EvalError> {
        eval_potential(self, t)
    }
}

/// `γ(t)²`, the Helmholtz coefficient induced by a pulse shape `γ`.
#[derive(Debug, Clone, Copy)]
pub struct Squared<C>(pub C);

impl<C: Coefficient> Coefficient for Squared<C> {
    fn interval(&self) -> (f64, f64) {
        self.0.interval()
    }

    fn value(&self, t: f64) -> Result<f64, EvalError> {
        let g = self.0.value(t)?;
        Ok(g * g)
    }
}

fn build(source: String, ast: Expr, a: f64, b: f64) -> Result<PotentialSpec, ParseError> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(ParseError::InvalidInterval { a, b });
    }
    let n = FINITE_CHECK_SAMPLES;
    for k in 0..n {
        let t = a + (b - a) * k as f64 / (n - 1) as f64;
        if let Err(source) = ast.eval(t) {
            return Err(ParseError::NotFinite { t, source });
        }
    }
    Ok(PotentialSpec { source, ast, a, b })
}

pub fn parse_potential(src: &str, a: f64, b: f64) -> Result<PotentialSpec, ParseError> {
    let ast = parse_expr(src)?;
    build(src.to_string(), ast, a, b)
}

pub fn eval_potential(spec: &PotentialSpec, t: f64) -> Result<f64, EvalError> {
    if !t.is_finite() {
        return Err(EvalError::BadPoint(t));
    }
    spec.ast.eval(t)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass,
    /// Negative value beyond tolerance; `at` is the first offending sample.
    Negative { at: f64, value: f64 },
    IdenticallyZero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub samples: usize,
    pub min: f64,
    pub min_at: f64,
    pub max: f64,
    pub max_at: f64,
    pub mean: f64,
    pub verdict: Verdict,
}

impl ValidationReport {
    pub fn is_pass(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("coefficient is negative at t = {at} (value {value})")]
    Negative { at: f64, value: f64 },
    #[error("coefficient is identically zero on the interval")]
    IdenticallyZero,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Checks `φ ≥ 0` and `φ ≢ 0` on a uniform sample grid over the interval.
pub fn validate_nonneg<C: Coefficient + ?Sized>(
    coef: &C,
    samples: usize,
) -> Result<ValidationReport, ValidationError> {
    if samples < 2 {
        return Err(ValidationError::TooFewSamples(samples));
    }
    let (a, b) = coef.interval();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let (mut min_at, mut max_at) = (a, a);
    let mut sum = 0.0;
    let mut first_violation = None;
    for k in 0..samples {
        let t = a + (b - a) * k as f64 / (samples - 1) as f64;
        let v = coef.value(t)?;
        sum += v;
        if v < min {
            min = v;
            min_at = t;
        }
        if v > max {
            max = v;
            max_at = t;
        }
        if first_violation.is_none() && v < -NONNEG_TOLERANCE {
            first_violation = Some((t, v));
        }
    }
    let verdict = match first_violation {
        Some((at, value)) => Verdict::Negative { at, value },
        None if max <= NONNEG_TOLERANCE => Verdict::IdenticallyZero,
        None => Verdict::Pass,
    };
    Ok(ValidationReport { samples, min, min_at, max, max_at, mean: sum / samples as f64, verdict })
}

/// [`validate_nonneg`] at the default density, converted into an error on failure.
pub fn require_nonneg<C: Coefficient + ?Sized>(coef: &C) -> Result<ValidationReport, ValidationError> {
    let report = validate_nonneg(coef, DEFAULT_VALIDATION_SAMPLES)?;
    match report.verdict {
        Verdict::Pass => Ok(report),
        Verdict::Negative { at, value } => Err(ValidationError::Negative { at, value }),
        Verdict::IdenticallyZero => Err(ValidationError::IdenticallyZero),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(src: &str, a: f64, b: f64) -> PotentialSpec {
        parse_potential(src, a, b).unwrap()
    }

    fn rel_close(x: f64, y: f64, tol: f64) -> bool {
        (x - y).abs() <= tol * y.abs().max(1e-300)
    }

    #[test]
    fn table_potentials_parse() {
        spec("(1+sin(2*pi*t))^2", 0.0, 1.0);
        spec("1.1*exp(t)-1", 0.0, 1.0);
        spec("(t+pi)^4", 0.0, PI);
        spec("sin(t)^2", 0.0, 6.0);
    }

    #[test]
    fn truncated_input_reports_offset() {
        let err = parse_potential("(t+", 0.0, 1.0).unwrap_err();
        assert_eq!(err, ParseError::Syntax { offset: 3, message: "unexpected end of input".into() });
    }

    #[test]
    fn unknown_identifier() {
        match parse_potential("2*x", 0.0, 1.0) {
            Err(ParseError::UnknownIdentifier { offset, name }) => {
                assert_eq!(offset, 2);
                assert_eq!(name, "x");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_interval_and_empty() {
        assert!(matches!(parse_potential("t", 1.0, 1.0), Err(ParseError::InvalidInterval { .. })));
        assert!(matches!(parse_potential("t", 2.0, 1.0), Err(ParseError::InvalidInterval { .. })));
        assert_eq!(parse_potential("  ", 0.0, 1.0), Err(ParseError::Empty));
        assert!(matches!(parse_potential("1 2", 0.0, 1.0), Err(ParseError::Syntax { offset: 2, .. })));
        assert!(matches!(parse_potential("sin t", 0.0, 1.0), Err(ParseError::Syntax { .. })));
    }

    #[test]
    fn non_finite_rejected_at_construction() {
        assert!(matches!(parse_potential("log(t)", 0.0, 1.0), Err(ParseError::NotFinite { .. })));
        assert!(matches!(parse_potential("1/t", 0.0, 1.0), Err(ParseError::NotFinite { .. })));
        assert!(parse_potential("log(t)", 0.5, 1.0).is_ok());
    }

    #[test]
    fn precedence_and_associativity() {
        let e = |s: &str| parse_expr(s).unwrap().eval(0.0).unwrap();
        assert_eq!(e("-2^2"), -4.0);
        assert_eq!(e("2^3^2"), 512.0);
        assert_eq!(e("2^-1"), 0.5);
        assert_eq!(e("1-2-3"), -4.0);
        assert_eq!(e("8/4/2"), 1.0);
        assert_eq!(e("2+3*4"), 14.0);
        assert_eq!(e("-3*2"), -6.0);
        assert_eq!(e("1.5e2+2E-1"), 150.2);
    }

    #[test]
    fn evaluation_examples() {
        let s = spec("(1+sin(2*pi*t))^2", 0.0, 1.0);
        assert!((eval_potential(&s, 0.25).unwrap() - 4.0).abs() < 1e-15);
        let s = spec("1.1*exp(t)-1", 0.0, 1.0);
        assert!((eval_potential(&s, 0.0).unwrap() - 0.1).abs() < 1e-15);
        let s = spec("(t+pi)^4", 0.0, PI);
        assert!(rel_close(eval_potential(&s, 0.0).unwrap(), 97.409_091_034_002_43, 1e-14));
    }

    #[test]
    fn table_potentials_match_analytic_values() {
        type F = fn(f64) -> f64;
        let cases: [(&str, f64, F); 4] = [
            ("(1+sin(2*pi*t))^2", 1.0, |t| (1.0 + (2.0 * PI * t).sin()).powi(2)),
            ("1.1*exp(t)-1", 1.0, |t| 1.1 * t.exp() - 1.0),
            ("(t+pi)^4", PI, |t| (t + PI).powi(4)),
            ("sin(t)^2", 6.0, |t| t.sin().powi(2)),
        ];
        for (src, b, f) in cases {
            let s = spec(src, 0.0, b);
            for t in [0.0, 0.1 * b, 0.37 * b, 0.5 * b, 0.93 * b] {
                let got = eval_potential(&s, t).unwrap();
                let want = f(t);
                assert!((got - want).abs() <= 1e-12 * want.abs().max(1e-12), "{src} at {t}");
            }
        }
    }

    #[test]
    fn domain_errors_are_errors_not_nan() {
        let e = parse_expr("log(t)").unwrap();
        assert!(matches!(e.eval(-1.0), Err(EvalError::Domain { func: "log", .. })));
        let e = parse_expr("sqrt(t)").unwrap();
        assert!(matches!(e.eval(-1.0), Err(EvalError::Domain { func: "sqrt", .. })));
        let e = parse_expr("t^0.5").unwrap();
        assert!(matches!(e.eval(-1.0), Err(EvalError::NonFinite { .. })));
        let e = parse_expr("1/t").unwrap();
        assert_eq!(e.eval(0.0), Err(EvalError::DivisionByZero));
        let s = spec("t", 0.0, 1.0);
        assert!(matches!(eval_potential(&s, f64::NAN), Err(EvalError::BadPoint(_))));
    }

    #[test]
    fn validation_examples() {
        let r = validate_nonneg(&spec("1.1*exp(t)-1", 0.0, 1.0), 1000).unwrap();
        assert!(r.is_pass());
        assert!((r.min - 0.1).abs() < 1e-15);

        let r = validate_nonneg(&spec("sin(2*pi*t)", 0.0, 1.0), DEFAULT_VALIDATION_SAMPLES).unwrap();
        match r.verdict {
            Verdict::Negative { at, .. } => assert!(at > 0.5 && at < 0.51),
            ref v => panic!("unexpected {v:?}"),
        }
        assert!((r.min_at - 0.75).abs() < 1e-3);

        let r = validate_nonneg(&spec("0", 0.0, 1.0), 100).unwrap();
        assert_eq!(r.verdict, Verdict::IdenticallyZero);
        assert_eq!(require_nonneg(&spec("0", 0.0, 1.0)), Err(ValidationError::IdenticallyZero));
        assert_eq!(validate_nonneg(&spec("1", 0.0, 1.0), 1), Err(ValidationError::TooFewSamples(1)));
    }

    #[test]
    fn squared_shape() {
        let g = spec("1+sin(2*pi*t)", 0.0, 1.0);
        let phi = Squared(&g);
        assert!((phi.value(0.25).unwrap() - 4.0).abs() < 1e-15);
        assert_eq!(phi.interval(), (0.0, 1.0));
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..100.0).prop_map(Expr::Num),
            Just(Expr::Var),
            Just(Expr::Pi),
        ];
        leaf.prop_recursive(4, 32, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (inner.clone(), inner.clone(), prop_oneof![
                    Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul),
                    Just(BinOp::Div), Just(BinOp::Pow)
                ])
                    .prop_map(|(l, r, op)| Expr::Binary { op, lhs: Box::new(l), rhs: Box::new(r) }),
                (inner, prop_oneof![Just(Func::Sin), Just(Func::Cos), Just(Func::Exp), Just(Func::Abs)])
                    .prop_map(|(e, func)| Expr::Call { func, arg: Box::new(e) }),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_fixpoint(e in arb_expr()) {
            let printed = e.to_string();
            let reparsed = parse_expr(&printed).unwrap();
            prop_assert_eq!(&reparsed, &e);
            prop_assert_eq!(reparsed.to_string(), printed);
        }

        #[test]
        fn addition_commutes(l in arb_expr(), r in arb_expr(), t in -3.0f64..3.0) {
            let lr = parse_expr(&format!("{l}+{r}")).unwrap().eval(t);
            let rl = parse_expr(&format!("{r}+{l}")).unwrap().eval(t);
            if let (Ok(x), Ok(y)) = (lr, rl) {
                prop_assert!((x - y).abs() <= 4.0 * f64::EPSILON * x.abs().max(y.abs()));
            }
        }
    }
}
