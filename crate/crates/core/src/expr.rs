//! Analytic rate and reward expressions.
//!
//! Expressions are trees over species variables (indexed by species
//! position), numeric constants and the system size `N`, closed under
//! `+ - * /` and integer powers. Every node is differentiable, so the
//! Jacobian of the drift is obtained symbolically.

use std::collections::BTreeSet;
use std::fmt;

use crate::lex::{Cursor, ParseError, Tok};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    /// The system size `N`.
    SystemSize,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
}

impl Expr {
    pub fn constant(v: f64) -> Self {
        Expr::Const(v)
    }

    pub fn is_const(&self) -> bool {
        matches!(self, Expr::Const(_))
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(v) => Some(*v),
            _ => None,
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x + y),
            (Some(0.0), _) => b,
            (_, Some(0.0)) => a,
            _ => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x - y),
            (Some(0.0), _) => Expr::neg(b),
            (_, Some(0.0)) => a,
            _ => Expr::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::Const(x * y),
            (Some(0.0), _) | (_, Some(0.0)) => Expr::Const(0.0),
            (Some(1.0), _) => b,
            (_, Some(1.0)) => a,
            _ => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) if y != 0.0 => Expr::Const(x / y),
            (Some(0.0), _) => Expr::Const(0.0),
            (_, Some(1.0)) => a,
            _ => Expr::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(x) => Expr::Const(-x),
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        }
    }

    pub fn pow(a: Expr, p: i32) -> Expr {
        match (a.as_const(), p) {
            (_, 0) => Expr::Const(1.0),
            (_, 1) => a,
            (Some(x), _) => Expr::Const(x.powi(p)),
            _ => Expr::Pow(Box::new(a), p),
        }
    }

    /// Evaluates with `vars[i]` bound to species `i` and `N = system_size`.
    pub fn eval(&self, vars: &[f64], system_size: f64) -> f64 {
        match self {
            Expr::Const(v) => *v,
            Expr::Var(i) => vars[*i],
            Expr::SystemSize => system_size,
            Expr::Neg(a) => -a.eval(vars, system_size),
            Expr::Add(a, b) => a.eval(vars, system_size) + b.eval(vars, system_size),
            Expr::Sub(a, b) => a.eval(vars, system_size) - b.eval(vars, system_size),
            Expr::Mul(a, b) => a.eval(vars, system_size) * b.eval(vars, system_size),
            Expr::Div(a, b) => a.eval(vars, system_size) / b.eval(vars, system_size),
            Expr::Pow(a, p) => a.eval(vars, system_size).powi(*p),
        }
    }

    /// Symbolic partial derivative with respect to variable `var`.
    pub fn diff(&self, var: usize) -> Expr {
        match self {
            Expr::Const(_) | Expr::SystemSize => Expr::Const(0.0),
            Expr::Var(i) => Expr::Const(if *i == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => Expr::neg(a.diff(var)),
            Expr::Add(a, b) => Expr::add(a.diff(var), b.diff(var)),
            Expr::Sub(a, b) => Expr::sub(a.diff(var), b.diff(var)),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.diff(var), (**b).clone()),
                Expr::mul((**a).clone(), b.diff(var)),
            ),
            Expr::Div(a, b) => {
                // (a'b - ab') / b^2
                let num = Expr::sub(
                    Expr::mul(a.diff(var), (**b).clone()),
                    Expr::mul((**a).clone(), b.diff(var)),
                );
                Expr::div(num, Expr::pow((**b).clone(), 2))
            }
            Expr::Pow(a, p) => Expr::mul(
                Expr::mul(Expr::Const(*p as f64), Expr::pow((**a).clone(), p - 1)),
                a.diff(var),
            ),
        }
    }

    /// Polynomial degree in the species variables, or `None` when the
    /// expression is not a polynomial (division by a non-constant, negative
    /// powers of non-constants).
    pub fn degree(&self) -> Option<u32> {
        match self {
            Expr::Const(_) | Expr::SystemSize => Some(0),
            Expr::Var(_) => Some(1),
            Expr::Neg(a) => a.degree(),
            Expr::Add(a, b) | Expr::Sub(a, b) => Some(a.degree()?.max(b.degree()?)),
            Expr::Mul(a, b) => Some(a.degree()? + b.degree()?),
            Expr::Div(a, b) => match b.degree()? {
                0 => a.degree(),
                _ => None,
            },
            Expr::Pow(a, p) => {
                let d = a.degree()?;
                if *p >= 0 {
                    Some(d * (*p as u32))
                } else if d == 0 {
                    Some(0)
                } else {
                    None
                }
            }
        }
    }

    pub fn variables(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<usize>) {
        match self {
            Expr::Var(i) => {
                out.insert(*i);
            }
            Expr::Const(_) | Expr::SystemSize => {}
            Expr::Neg(a) | Expr::Pow(a, _) => a.collect_vars(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Replaces every variable `i` by `scale * Var(i)`.
    pub fn scale_vars(&self, scale: &Expr) -> Expr {
        match self {
            Expr::Var(i) => Expr::mul(scale.clone(), Expr::Var(*i)),
            Expr::Const(_) | Expr::SystemSize => self.clone(),
            Expr::Neg(a) => Expr::neg(a.scale_vars(scale)),
            Expr::Add(a, b) => Expr::add(a.scale_vars(scale), b.scale_vars(scale)),
            Expr::Sub(a, b) => Expr::sub(a.scale_vars(scale), b.scale_vars(scale)),
            Expr::Mul(a, b) => Expr::mul(a.scale_vars(scale), b.scale_vars(scale)),
            Expr::Div(a, b) => Expr::div(a.scale_vars(scale), b.scale_vars(scale)),
            Expr::Pow(a, p) => Expr::pow(a.scale_vars(scale), *p),
        }
    }

    /// Renders the expression using `names` for variables.
    pub fn display<'a>(&'a self, names: &'a [String]) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, names }
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    names: &'a [String],
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self.expr, self.names, 0)
    }
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr, names: &[String], prec: u8) -> fmt::Result {
    let open = match e {
        Expr::Add(..) | Expr::Sub(..) => prec > 1,
        Expr::Mul(..) | Expr::Div(..) => prec > 2,
        Expr::Neg(..) => prec > 3,
        Expr::Pow(..) => prec > 4,
        _ => false,
    };
    if open {
        write!(f, "(")?;
    }
    match e {
        Expr::Const(v) => write!(f, "{v}")?,
        Expr::Var(i) => match names.get(*i) {
            Some(n) => write!(f, "{n}")?,
            None => write!(f, "x{i}")?,
        },
        Expr::SystemSize => write!(f, "N")?,
        Expr::Neg(a) => {
            write!(f, "-")?;
            write_expr(f, a, names, 4)?;
        }
        Expr::Add(a, b) => {
            write_expr(f, a, names, 1)?;
            write!(f, " + ")?;
            write_expr(f, b, names, 2)?;
        }
        Expr::Sub(a, b) => {
            write_expr(f, a, names, 1)?;
            write!(f, " - ")?;
            write_expr(f, b, names, 2)?;
        }
        Expr::Mul(a, b) => {
            write_expr(f, a, names, 2)?;
            write!(f, " * ")?;
            write_expr(f, b, names, 3)?;
        }
        Expr::Div(a, b) => {
            write_expr(f, a, names, 2)?;
            write!(f, " / ")?;
            write_expr(f, b, names, 3)?;
        }
        Expr::Pow(a, p) => {
            write_expr(f, a, names, 5)?;
            write!(f, "^{p}")?;
        }
    }
    if open {
        write!(f, ")")?;
    }
    Ok(())
}

/// Recursive-descent parser for arithmetic expressions.
///
/// `resolve` maps identifiers to leaves (species variables or `N`); an
/// unresolved identifier terminates the expression without consuming it, so
/// callers can embed expressions in a larger grammar.
pub fn parse_expr(
    cur: &mut Cursor<'_>,
    resolve: &dyn Fn(&str) -> Option<Expr>,
) -> Result<Expr, ParseError> {
    let mut lhs = parse_term(cur, resolve)?;
    loop {
        if cur.eat(&Tok::Plus) {
            let rhs = parse_term(cur, resolve)?;
            lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
        } else if cur.peek() == Some(&Tok::Minus) {
            cur.next();
            let rhs = parse_term(cur, resolve)?;
            lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
        } else {
            return Ok(lhs);
        }
    }
}

fn parse_term(
    cur: &mut Cursor<'_>,
    resolve: &dyn Fn(&str) -> Option<Expr>,
) -> Result<Expr, ParseError> {
    let mut lhs = parse_unary(cur, resolve)?;
    loop {
        if cur.eat(&Tok::Star) {
            let rhs = parse_unary(cur, resolve)?;
            lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
        } else if cur.eat(&Tok::Slash) {
            let rhs = parse_unary(cur, resolve)?;
            lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
        } else {
            return Ok(lhs);
        }
    }
}

fn parse_unary(
    cur: &mut Cursor<'_>,
    resolve: &dyn Fn(&str) -> Option<Expr>,
) -> Result<Expr, ParseError> {
    if cur.eat(&Tok::Minus) {
        return Ok(Expr::Neg(Box::new(parse_unary(cur, resolve)?)));
    }
    if cur.eat(&Tok::Plus) {
        return parse_unary(cur, resolve);
    }
    let base = parse_primary(cur, resolve)?;
    if cur.eat(&Tok::Caret) {
        let neg = cur.eat(&Tok::Minus);
        let (line, col) = cur.location();
        let p = match cur.next().map(|t| &t.tok) {
            Some(Tok::Num(v)) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => *v as i32,
            _ => {
                return Err(ParseError::new(
                    line,
                    col,
                    "exponent must be an integer literal",
                ))
            }
        };
        return Ok(Expr::Pow(Box::new(base), if neg { -p } else { p }));
    }
    Ok(base)
}

fn parse_primary(
    cur: &mut Cursor<'_>,
    resolve: &dyn Fn(&str) -> Option<Expr>,
) -> Result<Expr, ParseError> {
    match cur.peek() {
        Some(Tok::Num(v)) => {
            let v = *v;
            cur.next();
            Ok(Expr::Const(v))
        }
        Some(Tok::Ident(name)) => match resolve(name) {
            Some(e) => {
                cur.next();
                Ok(e)
            }
            None => Err(cur.error(format!("unknown identifier `{name}`"))),
        },
        Some(Tok::LParen) => {
            cur.next();
            let e = parse_expr(cur, resolve)?;
            cur.expect(&Tok::RParen)?;
            Ok(e)
        }
        _ => Err(cur.unexpected("an expression")),
    }
}
