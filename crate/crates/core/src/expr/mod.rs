//! Scalar expressions in `n` real variables.
//!
//! This is the small language in which vector fields and smooth maps are
//! written. Expressions are parsed once into an immutable [`ExprAst`], then
//! evaluated many times (the integrator calls them at every stage) and
//! differentiated symbolically to obtain exact Jacobians.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := power (('*' | '/') power)*
//! power   := unary ('^' power)?          right associative
//! unary   := ('-' | '+') unary | primary
//! primary := number | constant | variable | function '(' args ')' | '(' expr ')'
//! ```
//!
//! Unary minus binds tighter than `^`, so `-x^2` reads as `(-x)^2`.
//! Variables are `x1..xn`; when `n <= 3` the names `x`, `y`, `z` alias
//! `x1`, `x2`, `x3`. Functions: `sin cos tan atan exp log sqrt abs` (unary),
//! `pow min max` (binary). Constants: `pi`, `e`.
//!
//! Evaluation never returns a silent NaN: leaving the domain of `log`,
//! `sqrt`, `pow` or dividing by zero produces a [`DomainFault`] value that
//! names the offending subexpression.

mod diff;
mod parser;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diff::KinkRule;

/// Character range `[start, end)` in the source text, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    /// 1-based column of the first character, as shown in diagnostics.
    pub fn column(&self) -> usize {
        self.start + 1
    }

    fn join(self, other: Span) -> Span {
        Span::new(self.start.min(other.start), self.end.max(other.end))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }
}

/// Built-in functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Atan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Pow,
    Min,
    Max,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Atan => "atan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Pow => "pow",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "atan" => Func::Atan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "pow" => Func::Pow,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Pow | Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    /// `abs`, `min` and `max` have kinks and are not differentiable everywhere.
    pub fn is_smooth(self) -> bool {
        !matches!(self, Func::Abs | Func::Min | Func::Max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    /// 0-based variable index.
    Var(usize),
    Neg(Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
    /// `if lhs <= rhs { if_le } else { otherwise }`. Only produced by
    /// differentiating kinked functions under [`KinkRule::LeftBranch`]; the
    /// parser never accepts it.
    Select {
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        if_le: Box<Expr>,
        otherwise: Box<Expr>,
    },
}

/// A node together with the source range it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub node: Node,
    pub span: Span,
}

impl Expr {
    pub fn new(node: Node, span: Span) -> Self {
        Expr { node, span }
    }

    pub fn constant(value: f64) -> Self {
        Expr::new(Node::Const(value), Span::default())
    }

    pub fn var(index: usize) -> Self {
        Expr::new(Node::Var(index), Span::default())
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.node {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    fn is_const(&self, value: f64) -> bool {
        self.as_const() == Some(value)
    }

    // Smart constructors. They fold arithmetic between literals (when the
    // result is finite) and drop additive zeros and multiplicative ones.

    pub fn neg(a: Expr) -> Expr {
        let span = a.span;
        match a.node {
            Node::Const(c) => Expr::new(Node::Const(-c), span),
            Node::Neg(inner) => *inner,
            node => Expr::new(Node::Neg(Box::new(Expr::new(node, span))), span),
        }
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
        let span = a.span.join(b.span);
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if let Ok(v) = apply_binary(op, x, y) {
                return Expr::new(Node::Const(v), span);
            }
        }
        match op {
            BinaryOp::Add if a.is_const(0.0) => return b,
            BinaryOp::Add | BinaryOp::Sub if b.is_const(0.0) => return a,
            BinaryOp::Sub if a.is_const(0.0) => return Expr::neg(b),
            BinaryOp::Mul if a.is_const(0.0) || b.is_const(0.0) => return Expr::new(Node::Const(0.0), span),
            BinaryOp::Mul if a.is_const(1.0) => return b,
            BinaryOp::Mul | BinaryOp::Div | BinaryOp::Pow if b.is_const(1.0) => return a,
            BinaryOp::Div if a.is_const(0.0) => return Expr::new(Node::Const(0.0), span),
            _ => {}
        }
        Expr::new(Node::Binary(op, Box::new(a), Box::new(b)), span)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryOp::Add, a, b)
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryOp::Mul, a, b)
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryOp::Div, a, b)
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryOp::Pow, a, b)
    }

    pub fn call(func: Func, args: Vec<Expr>) -> Expr {
        let span = args.iter().map(|a| a.span).reduce(Span::join).unwrap_or_default();
        if let Some(consts) = args.iter().map(Expr::as_const).collect::<Option<Vec<_>>>() {
            if let Ok(v) = apply_func(func, &consts) {
                return Expr::new(Node::Const(v), span);
            }
        }
        Expr::new(Node::Call(func, args), span)
    }

    fn max_var(&self) -> Option<usize> {
        match &self.node {
            Node::Const(_) => None,
            Node::Var(i) => Some(*i),
            Node::Neg(a) => a.max_var(),
            Node::Binary(_, a, b) => a.max_var().max(b.max_var()),
            Node::Call(_, args) => args.iter().filter_map(Expr::max_var).max(),
            Node::Select {
                lhs,
                rhs,
                if_le,
                otherwise,
            } => [lhs, rhs, if_le, otherwise].iter().filter_map(|e| e.max_var()).max(),
        }
    }

    fn is_smooth(&self) -> bool {
        match &self.node {
            Node::Const(_) | Node::Var(_) => true,
            Node::Neg(a) => a.is_smooth(),
            Node::Binary(_, a, b) => a.is_smooth() && b.is_smooth(),
            Node::Call(f, args) => f.is_smooth() && args.iter().all(Expr::is_smooth),
            Node::Select { .. } => false,
        }
    }

    fn substitute(&self, replacements: &[Expr]) -> Expr {
        let node = match &self.node {
            Node::Const(c) => Node::Const(*c),
            Node::Var(i) => return replacements[*i].clone(),
            Node::Neg(a) => Node::Neg(Box::new(a.substitute(replacements))),
            Node::Binary(op, a, b) => Node::Binary(
                *op,
                Box::new(a.substitute(replacements)),
                Box::new(b.substitute(replacements)),
            ),
            Node::Call(f, args) => Node::Call(*f, args.iter().map(|a| a.substitute(replacements)).collect()),
            Node::Select {
                lhs,
                rhs,
                if_le,
                otherwise,
            } => Node::Select {
                lhs: Box::new(lhs.substitute(replacements)),
                rhs: Box::new(rhs.substitute(replacements)),
                if_le: Box::new(if_le.substitute(replacements)),
                otherwise: Box::new(otherwise.substitute(replacements)),
            },
        };
        Expr::new(node, self.span)
    }

    fn eval_inner<'a>(&'a self, x: &[f64]) -> Result<f64, (FaultKind, &'a Expr)> {
        let value = match &self.node {
            Node::Const(c) => *c,
            Node::Var(i) => x[*i],
            Node::Neg(a) => -a.eval_inner(x)?,
            Node::Binary(op, a, b) => {
                let lhs = a.eval_inner(x)?;
                let rhs = b.eval_inner(x)?;
                apply_binary(*op, lhs, rhs).map_err(|k| (k, self))?
            }
            Node::Call(f, args) => match args.as_slice() {
                [a] => apply_func(*f, &[a.eval_inner(x)?]).map_err(|k| (k, self))?,
                [a, b] => apply_func(*f, &[a.eval_inner(x)?, b.eval_inner(x)?]).map_err(|k| (k, self))?,
                _ => unreachable!("arity checked at construction"),
            },
            Node::Select {
                lhs,
                rhs,
                if_le,
                otherwise,
            } => {
                if lhs.eval_inner(x)? <= rhs.eval_inner(x)? {
                    if_le.eval_inner(x)?
                } else {
                    otherwise.eval_inner(x)?
                }
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err((FaultKind::NonFinite, self))
        }
    }
}

fn apply_binary(op: BinaryOp, a: f64, b: f64) -> Result<f64, FaultKind> {
    let v = match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => {
            if b == 0.0 {
                return Err(FaultKind::DivisionByZero);
            }
            a / b
        }
        BinaryOp::Pow => power(a, b)?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(FaultKind::NonFinite)
    }
}

fn power(base: f64, exponent: f64) -> Result<f64, FaultKind> {
    if base == 0.0 && exponent < 0.0 {
        return Err(FaultKind::DivisionByZero);
    }
    if exponent.fract() == 0.0 && exponent.abs() <= i32::MAX as f64 {
        return Ok(base.powi(exponent as i32));
    }
    if base < 0.0 {
        return Err(FaultKind::PowDomain);
    }
    Ok(base.powf(exponent))
}

fn apply_func(f: Func, args: &[f64]) -> Result<f64, FaultKind> {
    let a = args[0];
    let v = match f {
        Func::Sin => a.sin(),
        Func::Cos => a.cos(),
        Func::Tan => a.tan(),
        Func::Atan => a.atan(),
        Func::Exp => a.exp(),
        Func::Log => {
            if a <= 0.0 {
                return Err(FaultKind::LogDomain);
            }
            a.ln()
        }
        Func::Sqrt => {
            if a < 0.0 {
                return Err(FaultKind::SqrtDomain);
            }
            a.sqrt()
        }
        Func::Abs => a.abs(),
        Func::Pow => power(a, args[1])?,
        Func::Min => a.min(args[1]),
        Func::Max => a.max(args[1]),
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(FaultKind::NonFinite)
    }
}

/// Why an evaluation failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    DivisionByZero,
    LogDomain,
    SqrtDomain,
    PowDomain,
    NonFinite,
    DimensionMismatch,
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FaultKind::DivisionByZero => "division by zero",
            FaultKind::LogDomain => "log of a non-positive number",
            FaultKind::SqrtDomain => "sqrt of a negative number",
            FaultKind::PowDomain => "non-integer power of a negative number",
            FaultKind::NonFinite => "non-finite result",
            FaultKind::DimensionMismatch => "input length does not match dimension",
        };
        f.write_str(s)
    }
}

/// A failed evaluation. This is an ordinary value: sweeps over many inputs
/// record it and move on.
#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("{kind} in `{subexpr}` (column {column}) at x = {input:?}")]
pub struct DomainFault {
    pub kind: FaultKind,
    pub subexpr: String,
    pub column: usize,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Empty,
    Syntax,
    UnknownIdentifier,
    Arity,
    VariableOutOfRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("column {column}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    /// 1-based.
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("`{func}` is not differentiable at its kink (column {column}); opt into the left-branch rule to allow it")]
    NonSmooth { func: &'static str, column: usize },
    #[error("variable index {index} out of range for dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize },
    #[error("dimension must be positive")]
    ZeroDimension,
    #[error("substitution needs {expected} expressions, got {got}")]
    SubstitutionArity { expected: usize, got: usize },
}

/// Variable values for one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalContext {
    values: Vec<f64>,
}

impl EvalContext {
    pub fn new(values: Vec<f64>, dim: usize) -> Result<Self, ExprError> {
        if dim == 0 {
            return Err(ExprError::ZeroDimension);
        }
        if values.len() != dim {
            return Err(ExprError::VariableOutOfRange {
                index: values.len(),
                dim,
            });
        }
        Ok(EvalContext { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// A parsed expression in a fixed number of variables.
///
/// Immutable once built; share it freely between threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprAst {
    root: Expr,
    dim: usize,
    source: Option<Arc<str>>,
}

impl ExprAst {
    pub fn parse(source: &str, dim: usize) -> Result<Self, ExprError> {
        if dim == 0 {
            return Err(ExprError::ZeroDimension);
        }
        let root = parser::parse(source, dim)?;
        Ok(ExprAst {
            root,
            dim,
            source: Some(Arc::from(source)),
        })
    }

    /// Wrap a programmatically built tree.
    pub fn from_expr(root: Expr, dim: usize) -> Result<Self, ExprError> {
        if dim == 0 {
            return Err(ExprError::ZeroDimension);
        }
        if let Some(index) = root.max_var().filter(|&i| i >= dim) {
            return Err(ExprError::VariableOutOfRange { index, dim });
        }
        check_arity(&root)?;
        Ok(ExprAst {
            root,
            dim,
            source: None,
        })
    }

    pub fn constant(value: f64, dim: usize) -> Result<Self, ExprError> {
        ExprAst::from_expr(Expr::constant(value), dim)
    }

    /// `sum_i coeffs[i] * x_i`.
    pub fn linear(coeffs: &[f64]) -> Result<Self, ExprError> {
        let root = coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| Expr::mul(Expr::constant(c), Expr::var(i)))
            .fold(Expr::constant(0.0), Expr::add);
        ExprAst::from_expr(root, coeffs.len())
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Original text if this expression came from the parser.
    pub fn source(&self) -> Option<&str> {
        self.source.as_deref()
    }

    /// Text that parses back to an equivalent expression: the original
    /// source when there is one, otherwise the printed tree.
    pub fn to_source(&self) -> String {
        match &self.source {
            Some(s) => s.to_string(),
            None => self.to_string(),
        }
    }

    pub fn is_smooth(&self) -> bool {
        self.root.is_smooth()
    }

    pub fn evaluate(&self, ctx: &EvalContext) -> Result<f64, DomainFault> {
        self.eval(ctx.values())
    }

    /// Evaluate at `x`, which must have length `dim`.
    pub fn eval(&self, x: &[f64]) -> Result<f64, DomainFault> {
        if x.len() != self.dim {
            return Err(DomainFault {
                kind: FaultKind::DimensionMismatch,
                subexpr: self.to_string(),
                column: self.root.span.column(),
                input: x.to_vec(),
            });
        }
        self.root.eval_inner(x).map_err(|(kind, at)| DomainFault {
            kind,
            subexpr: at.to_string(),
            column: at.span.column(),
            input: x.to_vec(),
        })
    }

    /// Exact partial derivative with respect to variable `var` (0-based).
    /// Fails on `abs`, `min`, `max`.
    pub fn differentiate(&self, var: usize) -> Result<ExprAst, ExprError> {
        self.differentiate_with(var, KinkRule::Reject)
    }

    pub fn differentiate_with(&self, var: usize, kinks: KinkRule) -> Result<ExprAst, ExprError> {
        if var >= self.dim {
            return Err(ExprError::VariableOutOfRange {
                index: var,
                dim: self.dim,
            });
        }
        Ok(ExprAst {
            root: diff::derivative(&self.root, var, kinks)?,
            dim: self.dim,
            source: None,
        })
    }

    /// Replace every variable `x_i` by `inner[i]`; the result lives in the
    /// inner expressions' dimension.
    pub fn substitute(&self, inner: &[ExprAst]) -> Result<ExprAst, ExprError> {
        if inner.len() != self.dim {
            return Err(ExprError::SubstitutionArity {
                expected: self.dim,
                got: inner.len(),
            });
        }
        let dim = inner[0].dim;
        if let Some(bad) = inner.iter().find(|e| e.dim != dim) {
            return Err(ExprError::VariableOutOfRange { index: bad.dim, dim });
        }
        let roots: Vec<Expr> = inner.iter().map(|e| e.root.clone()).collect();
        Ok(ExprAst {
            root: self.root.substitute(&roots),
            dim,
            source: None,
        })
    }
}

fn check_arity(e: &Expr) -> Result<(), ExprError> {
    match &e.node {
        Node::Const(_) | Node::Var(_) => Ok(()),
        Node::Neg(a) => check_arity(a),
        Node::Binary(_, a, b) => {
            check_arity(a)?;
            check_arity(b)
        }
        Node::Call(f, args) => {
            if args.len() != f.arity() {
                return Err(ParseError {
                    kind: ParseErrorKind::Arity,
                    column: e.span.column(),
                    message: format!("`{}` takes {} argument(s), got {}", f.name(), f.arity(), args.len()),
                }
                .into());
            }
            args.iter().try_for_each(check_arity)
        }
        Node::Select {
            lhs,
            rhs,
            if_le,
            otherwise,
        } => {
            check_arity(lhs)?;
            check_arity(rhs)?;
            check_arity(if_le)?;
            check_arity(otherwise)
        }
    }
}

fn fmt_const(c: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    // Debug formatting of f64 is the shortest string that round-trips.
    if c < 0.0 || (c == 0.0 && c.is_sign_negative()) {
        write!(f, "(-{:?})", -c)
    } else {
        write!(f, "{:?}", c)
    }
}

/// Fully parenthesized; variables always print as `x1..xn`.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Node::Const(c) => fmt_const(*c, f),
            Node::Var(i) => write!(f, "x{}", i + 1),
            Node::Neg(a) => write!(f, "(-{})", a),
            Node::Binary(op, a, b) => write!(f, "({} {} {})", a, op.symbol(), b),
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}", a)?;
                }
                f.write_str(")")
            }
            Node::Select {
                lhs,
                rhs,
                if_le,
                otherwise,
            } => write!(f, "select_le({}, {}, {}, {})", lhs, rhs, if_le, otherwise),
        }
    }
}

impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, dim: usize, x: &[f64]) -> Result<f64, DomainFault> {
        ExprAst::parse(src, dim).unwrap().eval(x)
    }

    #[test]
    fn cubic_field_at_two() {
        assert_eq!(ev("-x^3", 1, &[2.0]).unwrap(), -8.0);
    }

    #[test]
    fn identity_expression() {
        for c in [-3.5, 0.0, 1e-300, 7.25] {
            assert_eq!(ev("x1", 1, &[c]).unwrap(), c);
        }
    }

    #[test]
    fn log_map_example() {
        assert_eq!(ev("1/sqrt(log(1/x^2)+1)", 1, &[1.0]).unwrap(), 1.0);
        assert_eq!(ev("-log(x)", 1, &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn log_map_at_half() {
        // (1 - 2 ln 0.5)^(-1/2); mpmath at 30 digits gives
        // 0.647348271177428269114144444131
        let v = ev("1/sqrt(log(1/x^2)+1)", 1, &[0.5]).unwrap();
        assert!((v - 0.647_348_271_177_428_3).abs() < 1e-15, "{v}");
    }

    #[test]
    fn domain_faults_are_values() {
        let f = ev("log(x)", 1, &[-1.0]).unwrap_err();
        assert_eq!(f.kind, FaultKind::LogDomain);
        assert_eq!(f.input, vec![-1.0]);
        assert_eq!(f.subexpr, "log(x1)");
        assert_eq!(ev("1/x", 1, &[0.0]).unwrap_err().kind, FaultKind::DivisionByZero);
        assert_eq!(ev("sqrt(x)", 1, &[-1e-9]).unwrap_err().kind, FaultKind::SqrtDomain);
        assert_eq!(ev("x^0.5", 1, &[-2.0]).unwrap_err().kind, FaultKind::PowDomain);
        assert_eq!(ev("exp(x)", 1, &[1e4]).unwrap_err().kind, FaultKind::NonFinite);
    }

    #[test]
    fn fault_points_at_inner_subexpression() {
        let f = ev("1 + 2*log(x - 3)", 1, &[1.0]).unwrap_err();
        assert_eq!(f.kind, FaultKind::LogDomain);
        assert_eq!(f.column, 7);
        assert_eq!(f.subexpr, "log((x1 - 3.0))");
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("1 + 2*3^2", 1, &[0.0]).unwrap(), 19.0);
        assert_eq!(ev("2^3^2", 1, &[0.0]).unwrap(), 512.0);
        // unary minus binds tighter than ^
        assert_eq!(ev("-x^2", 1, &[3.0]).unwrap(), 9.0);
        assert_eq!(ev("2^-1", 1, &[0.0]).unwrap(), 0.5);
        assert_eq!(ev("8/4/2", 1, &[0.0]).unwrap(), 1.0);
        assert_eq!(ev("1 - 2 - 3", 1, &[0.0]).unwrap(), -4.0);
        assert_eq!(ev("-(1 + 2)*x", 1, &[2.0]).unwrap(), -6.0);
    }

    #[test]
    fn aliases_and_constants() {
        assert_eq!(ev("x + 2*y + 3*z", 3, &[1.0, 2.0, 3.0]).unwrap(), 14.0);
        assert_eq!(ev("x1*x2", 2, &[2.0, 5.0]).unwrap(), 10.0);
        assert_eq!(ev("pi", 1, &[0.0]).unwrap(), std::f64::consts::PI);
        assert_eq!(ev("e", 1, &[0.0]).unwrap(), std::f64::consts::E);
        assert_eq!(ev("1.5e-3 + 2E2 + .5", 1, &[0.0]).unwrap(), 200.5015);
        assert_eq!(ev("min(x, 2) + max(x, 2) + pow(x, 2)", 1, &[3.0]).unwrap(), 14.0);
        assert_eq!(ev("atan(1)*4", 1, &[0.0]).unwrap(), std::f64::consts::PI);
    }

    #[test]
    fn parse_errors_carry_columns() {
        let err = |src: &str, dim| match ExprAst::parse(src, dim).unwrap_err() {
            ExprError::Parse(p) => p,
            other => panic!("{other:?}"),
        };
        let e = err("x + * 2", 1);
        assert_eq!((e.kind, e.column), (ParseErrorKind::Syntax, 5));
        let e = err("x + foo", 1);
        assert_eq!((e.kind, e.column), (ParseErrorKind::UnknownIdentifier, 5));
        let e = err("sin(x, x)", 1);
        assert_eq!(e.kind, ParseErrorKind::Arity);
        let e = err("pow(x)", 1);
        assert_eq!(e.kind, ParseErrorKind::Arity);
        let e = err("x3", 2);
        assert_eq!((e.kind, e.column), (ParseErrorKind::VariableOutOfRange, 1));
        let e = err("y", 1);
        assert_eq!(e.kind, ParseErrorKind::VariableOutOfRange);
        let e = err("x0", 2);
        assert_eq!(e.kind, ParseErrorKind::VariableOutOfRange);
        let e = err("   ", 1);
        assert_eq!(e.kind, ParseErrorKind::Empty);
        let e = err("(x + 1", 1);
        assert_eq!(e.kind, ParseErrorKind::Syntax);
        let e = err("2 x", 1);
        assert_eq!((e.kind, e.column), (ParseErrorKind::Syntax, 3));
        let e = err("x + 1 $", 1);
        assert_eq!((e.kind, e.column), (ParseErrorKind::Syntax, 7));
        // aliases only exist up to three dimensions
        let e = err("x", 4);
        assert_eq!(e.kind, ParseErrorKind::UnknownIdentifier);
    }

    #[test]
    fn printed_form_reparses() {
        let src = "-x^3 + 2.5*sin(y)/exp(-x) - pow(x, 0.1)";
        let a = ExprAst::parse(src, 2).unwrap();
        let b = ExprAst::parse(&a.to_string(), 2).unwrap();
        let p = [1.3, -0.7];
        assert_eq!(a.eval(&p).unwrap(), b.eval(&p).unwrap());
    }

    #[test]
    fn literal_arithmetic_folds() {
        let a = ExprAst::parse("2*3 + x", 1).unwrap();
        assert_eq!(a.to_string(), "(6.0 + x1)");
        let a = ExprAst::parse("-2", 1).unwrap();
        assert_eq!(a.root().as_const(), Some(-2.0));
        // non-finite folds are left for evaluation to report
        let a = ExprAst::parse("log(0) + x", 1).unwrap();
        assert_eq!(a.eval(&[1.0]).unwrap_err().kind, FaultKind::LogDomain);
    }

    #[test]
    fn substitution_composes() {
        let outer = ExprAst::parse("x1^2 + x2", 2).unwrap();
        let inner = [ExprAst::parse("sin(x)", 1).unwrap(), ExprAst::parse("3*x", 1).unwrap()];
        let c = outer.substitute(&inner).unwrap();
        assert_eq!(c.dim(), 1);
        let x: f64 = 0.4;
        assert_eq!(c.eval(&[x]).unwrap(), x.sin().powi(2) + 3.0 * x);
    }

    #[test]
    fn eval_context_checks_length() {
        assert!(EvalContext::new(vec![1.0], 2).is_err());
        let ctx = EvalContext::new(vec![1.0, 2.0], 2).unwrap();
        let a = ExprAst::parse("x*y", 2).unwrap();
        assert_eq!(a.evaluate(&ctx).unwrap(), 2.0);
        assert_eq!(a.eval(&[1.0]).unwrap_err().kind, FaultKind::DimensionMismatch);
    }

    #[test]
    fn linear_builder() {
        let a = ExprAst::linear(&[2.0, -1.0, 0.0]).unwrap();
        assert_eq!(a.eval(&[1.0, 3.0, 100.0]).unwrap(), -1.0);
    }
}
