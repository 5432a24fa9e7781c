//! Time-bounded CSL with reward operators: parsing and checking on the CLA
//! abstraction.
//!
//! ```text
//! P>0.6 [ (Pro < 0.1) U[0,50] (mRNA > 0.3) ]
//! P=? [ F[0,100] mRNA > Pro + 0.2 ]
//! R=? [ C<=500 : diff ]    R=? [ I=100 : diff ]    R=? [ F<=35 mRNA >= 0.3 : diff ]
//! ```
//!
//! Predicates are conjunctions of linear atoms. Atoms are normalized so that
//! each distinct row (up to a non-zero factor) becomes one projection axis
//! with an interval bound; one temporal operator may use at most two axes.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::abstraction::{
    RewardRule,
    floor_steps, propagate, AbstractionError, GridConfig, Plan, PropagationResult, TargetRegion,
    DEFAULT_SUPPORT_CAP, DEFAULT_TH,
};
use crate::cla::{project, solve_cla, ClaError, ClaSolution, ProjectionSpec};
use crate::expr::{parse_expr, Expr};
use crate::gauss::Interval;
use crate::lex::{tokenize, Cursor, ParseError, Tok};
use crate::model::{SrnModel, Units};
use crate::ode::Method;
use crate::rewards::{self, project_reward, RewardError, RewardStructure};

/// Verdicts closer than this to the threshold carry a warning.
pub const THRESHOLD_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CslError {
    #[error("property syntax error at {0}")]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Cla(#[from] ClaError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("while checking `{formula}`: {source}")]
    Context {
        formula: String,
        #[source]
        source: Box<CslError>,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Cmp {
    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Cmp::Lt => a < b,
            Cmp::Le => a <= b,
            Cmp::Gt => a > b,
            Cmp::Ge => a >= b,
        }
    }

    fn is_upper(self) -> bool {
        matches!(self, Cmp::Lt | Cmp::Le)
    }

    fn flipped(self) -> Self {
        match self {
            Cmp::Lt => Cmp::Gt,
            Cmp::Le => Cmp::Ge,
            Cmp::Gt => Cmp::Lt,
            Cmp::Ge => Cmp::Le,
        }
    }
}

impl fmt::Display for Cmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
        })
    }
}

/// `row · x̂ cmp bound` in concentrations.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub row: Vec<f64>,
    pub cmp: Cmp,
    pub bound: f64,
}

/// Conjunction of atoms; `satisfiable = false` encodes `false`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub atoms: Vec<Atom>,
    pub satisfiable: bool,
}

impl Predicate {
    pub fn tt() -> Self {
        Self {
            atoms: Vec::new(),
            satisfiable: true,
        }
    }

    pub fn holds(&self, xhat: &[f64]) -> bool {
        self.satisfiable
            && self.atoms.iter().all(|a| {
                let v: f64 = a.row.iter().zip(xhat).map(|(c, x)| c * x).sum();
                a.cmp.holds(v, a.bound)
            })
    }

    pub fn is_constant(&self) -> bool {
        self.atoms.is_empty() || !self.satisfiable
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Bound {
    Query,
    Threshold(Cmp, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CslFormula {
    Not(Box<CslFormula>),
    And(Box<CslFormula>, Box<CslFormula>),
    ProbReach {
        bound: Bound,
        t1: f64,
        t2: f64,
        target: Predicate,
    },
    ProbUntil {
        bound: Bound,
        t1: f64,
        t2: f64,
        safe: Predicate,
        goal: Predicate,
    },
    RewardCumulative {
        bound: Bound,
        horizon: f64,
        reward: String,
    },
    RewardInstant {
        bound: Bound,
        time: f64,
        reward: String,
    },
    RewardReach {
        bound: Bound,
        horizon: f64,
        target: Predicate,
        reward: String,
    },
}

/// A parsed property together with the unit its predicates and rewards
/// were written in.
#[derive(Debug, Clone, PartialEq)]
pub struct Property {
    pub formula: CslFormula,
    pub units: Units,
    pub species: Vec<String>,
}

impl CslFormula {
    pub fn bound(&self) -> Option<Bound> {
        match self {
            CslFormula::Not(_) | CslFormula::And(..) => None,
            CslFormula::ProbReach { bound, .. }
            | CslFormula::ProbUntil { bound, .. }
            | CslFormula::RewardCumulative { bound, .. }
            | CslFormula::RewardInstant { bound, .. }
            | CslFormula::RewardReach { bound, .. } => Some(*bound),
        }
    }

    pub fn is_query(&self) -> bool {
        self.bound() == Some(Bound::Query)
    }

    /// Upper time bound of a temporal leaf.
    pub fn time_bound(&self) -> Option<f64> {
        match self {
            CslFormula::ProbReach { t2, .. } | CslFormula::ProbUntil { t2, .. } => Some(*t2),
            CslFormula::RewardCumulative { horizon, .. } | CslFormula::RewardReach { horizon, .. } => Some(*horizon),
            CslFormula::RewardInstant { time, .. } => Some(*time),
            _ => None,
        }
    }

    /// Copy of a temporal leaf with its upper time bound replaced.
    pub fn with_time_bound(&self, t: f64) -> Self {
        let mut f = self.clone();
        match &mut f {
            CslFormula::ProbReach { t2, .. } | CslFormula::ProbUntil { t2, .. } => *t2 = t,
            CslFormula::RewardCumulative { horizon, .. } | CslFormula::RewardReach { horizon, .. } => *horizon = t,
            CslFormula::RewardInstant { time, .. } => *time = t,
            _ => {}
        }
        f
    }

    pub fn display<'a>(&'a self, species: &'a [String], units: Units, system_size: f64) -> FormulaDisplay<'a> {
        FormulaDisplay {
            formula: self,
            species,
            scale: units.scale(system_size),
        }
    }
}

pub struct FormulaDisplay<'a> {
    formula: &'a CslFormula,
    species: &'a [String],
    scale: f64,
}

impl FormulaDisplay<'_> {
    fn pred(&self, f: &mut fmt::Formatter<'_>, p: &Predicate) -> fmt::Result {
        if !p.satisfiable {
            return f.write_str("false");
        }
        if p.atoms.is_empty() {
            return f.write_str("true");
        }
        for (i, a) in p.atoms.iter().enumerate() {
            if i > 0 {
                f.write_str(" & ")?;
            }
            let mut first = true;
            for (c, name) in a.row.iter().zip(self.species) {
                if *c == 0.0 {
                    continue;
                }
                let sign = if *c < 0.0 { "-" } else if first { "" } else { "+" };
                let sep = if first { "" } else { " " };
                let mag = c.abs();
                if mag == 1.0 {
                    write!(f, "{sep}{sign}{}{name}", if first || sign.is_empty() { "" } else { " " })?;
                } else {
                    write!(f, "{sep}{sign}{}{mag}*{name}", if first || sign.is_empty() { "" } else { " " })?;
                }
                first = false;
            }
            write!(f, " {} {}", a.cmp, a.bound * self.scale)?;
        }
        Ok(())
    }

    fn bound(f: &mut fmt::Formatter<'_>, b: &Bound) -> fmt::Result {
        match b {
            Bound::Query => f.write_str("=?"),
            Bound::Threshold(c, p) => write!(f, "{c}{p}"),
        }
    }
}

impl fmt::Display for FormulaDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sub = |g: &'_ CslFormula| -> String {
            FormulaDisplay {
                formula: g,
                species: self.species,
                scale: self.scale,
            }
            .to_string()
        };
        match self.formula {
            CslFormula::Not(g) => write!(f, "!({})", sub(g)),
            CslFormula::And(a, b) => write!(f, "({}) & ({})", sub(a), sub(b)),
            CslFormula::ProbReach { bound, t1, t2, target } => {
                f.write_str("P")?;
                Self::bound(f, bound)?;
                write!(f, " [ F[{t1},{t2}] ")?;
                self.pred(f, target)?;
                f.write_str(" ]")
            }
            CslFormula::ProbUntil {
                bound,
                t1,
                t2,
                safe,
                goal,
            } => {
                f.write_str("P")?;
                Self::bound(f, bound)?;
                f.write_str(" [ (")?;
                self.pred(f, safe)?;
                write!(f, ") U[{t1},{t2}] (")?;
                self.pred(f, goal)?;
                f.write_str(") ]")
            }
            CslFormula::RewardCumulative { bound, horizon, reward } => {
                f.write_str("R")?;
                Self::bound(f, bound)?;
                write!(f, " [ C<={horizon} : {reward} ]")
            }
            CslFormula::RewardInstant { bound, time, reward } => {
                f.write_str("R")?;
                Self::bound(f, bound)?;
                write!(f, " [ I={time} : {reward} ]")
            }
            CslFormula::RewardReach {
                bound,
                horizon,
                target,
                reward,
            } => {
                f.write_str("R")?;
                Self::bound(f, bound)?;
                write!(f, " [ F<={horizon} ")?;
                self.pred(f, target)?;
                write!(f, " : {reward} ]")
            }
        }
    }
}

/// Projection rows and per-predicate regions of one temporal operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub rows: Vec<Vec<f64>>,
    pub regions: Vec<TargetRegion>,
}

fn first_nonzero(row: &[f64]) -> Option<usize> {
    row.iter().position(|&c| c != 0.0)
}

/// Factor `c` with `row = c·axis`, if the rows are parallel.
fn parallel_factor(axis: &[f64], row: &[f64]) -> Option<f64> {
    let j = first_nonzero(axis)?;
    let c = row[j] / axis[j];
    if c == 0.0 {
        return None;
    }
    let scale = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let ok = axis.iter().zip(row).all(|(a, r)| (c * a - r).abs() <= 1e-12 * scale);
    ok.then_some(c)
}

/// Maps the predicates of one temporal operator onto at most two axes.
pub fn normalize(preds: &[&Predicate]) -> Result<Normalized, CslError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut placed: Vec<Vec<(usize, f64, &Atom)>> = Vec::new();
    for p in preds {
        let mut entries = Vec::new();
        for a in &p.atoms {
            let found = rows
                .iter()
                .enumerate()
                .find_map(|(i, r)| parallel_factor(r, &a.row).map(|c| (i, c)));
            let (axis, c) = match found {
                Some(x) => x,
                None => {
                    let j = first_nonzero(&a.row).expect("constant atoms are folded at parse time");
                    let sign = a.row[j].signum();
                    rows.push(a.row.iter().map(|v| v * sign).collect());
                    (rows.len() - 1, sign)
                }
            };
            entries.push((axis, c, a));
        }
        placed.push(entries);
    }
    if rows.len() > 2 {
        return Err(CslError::Invalid(format!(
            "a temporal operator may constrain at most 2 distinct linear combinations, found {}",
            rows.len()
        )));
    }
    let m = rows.len();
    let regions = preds
        .iter()
        .zip(&placed)
        .map(|(p, entries)| {
            if !p.satisfiable {
                return TargetRegion::empty(m);
            }
            let mut region = TargetRegion::full(m);
            for (axis, c, a) in entries {
                let v = a.bound / c;
                let cmp = if *c < 0.0 { a.cmp.flipped() } else { a.cmp };
                let b = &mut region.bounds[*axis];
                if cmp.is_upper() {
                    b.hi = b.hi.min(v);
                } else {
                    b.lo = b.lo.max(v);
                }
            }
            region
        })
        .collect();
    Ok(Normalized { rows, regions })
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        v
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Moves each bound of an integer-coefficient atom halfway between the
/// last count value that fails it and the first that satisfies it. The
/// predicate is unchanged on integer states.
pub fn lattice_corrected(p: &Predicate, system_size: f64) -> Predicate {
    let atoms = p
        .atoms
        .iter()
        .map(|a| {
            let coeffs: Vec<f64> = a.row.iter().map(|&c| snap(c)).collect();
            if coeffs.iter().any(|c| c.fract() != 0.0 || c.abs() > 1e15) {
                return a.clone();
            }
            let g = coeffs.iter().fold(0, |g, c| gcd(g, c.abs() as u64));
            if g == 0 {
                return a.clone();
            }
            let g = g as f64;
            let q = snap(a.bound * system_size / g);
            let edge = match a.cmp {
                Cmp::Gt | Cmp::Le => g * q.floor() + g / 2.0,
                Cmp::Ge | Cmp::Lt => g * q.ceil() - g / 2.0,
            };
            Atom {
                row: a.row.clone(),
                cmp: a.cmp,
                bound: edge / system_size,
            }
        })
        .collect();
    Predicate {
        atoms,
        satisfiable: p.satisfiable,
    }
}

/// Parses a property against `model`. Bounds in predicates are read in
/// `units` and stored in concentrations.
pub fn parse_property(text: &str, model: &SrnModel, units: Units) -> Result<Property, CslError> {
    let toks = tokenize(text, 1, 1)?;
    let end = {
        let lines: Vec<&str> = text.lines().collect();
        (lines.len().max(1), lines.last().map_or(0, |l| l.chars().count()) + 1)
    };
    let mut p = Parser {
        cur: Cursor::new(&toks, end),
        model,
        units,
    };
    let formula = p.formula(false)?;
    if !p.cur.at_end() {
        return Err(p.cur.unexpected("end of property").into());
    }
    Ok(Property {
        formula,
        units,
        species: model.species.clone(),
    })
}

struct Parser<'a> {
    cur: Cursor<'a>,
    model: &'a SrnModel,
    units: Units,
}

impl Parser<'_> {
    fn formula(&mut self, nested: bool) -> Result<CslFormula, CslError> {
        let mut lhs = self.unary(nested)?;
        while self.cur.peek() == Some(&Tok::Amp) {
            if !nested && lhs.is_query() {
                return Err(self.cur.error("a `=?` query cannot be combined with `&`").into());
            }
            self.cur.next();
            let rhs = self.unary(true)?;
            lhs = CslFormula::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self, nested: bool) -> Result<CslFormula, CslError> {
        let start = self.cur.location();
        let f = match self.cur.peek() {
            Some(Tok::Bang) => {
                self.cur.next();
                CslFormula::Not(Box::new(self.unary(true)?))
            }
            Some(Tok::LParen) => {
                self.cur.next();
                let f = self.formula(nested)?;
                self.cur.expect(&Tok::RParen)?;
                f
            }
            Some(Tok::Ident(s)) if s == "P" => {
                self.cur.next();
                let bound = self.bound(true)?;
                self.cur.expect(&Tok::LBracket)?;
                let f = self.prob_path(bound)?;
                self.cur.expect(&Tok::RBracket)?;
                f
            }
            Some(Tok::Ident(s)) if s == "R" => {
                self.cur.next();
                let bound = self.bound(false)?;
                self.cur.expect(&Tok::LBracket)?;
                let f = self.reward_path(bound)?;
                self.cur.expect(&Tok::RBracket)?;
                f
            }
            _ => return Err(self.cur.unexpected("`P`, `R`, `!` or `(`").into()),
        };
        if nested && f.is_query() {
            return Err(ParseError::new(start.0, start.1, "a `=?` query cannot appear under `!` or `&`").into());
        }
        Ok(f)
    }

    fn bound(&mut self, probability: bool) -> Result<Bound, CslError> {
        let loc = self.cur.location();
        let cmp = match self.cur.next().map(|t| &t.tok) {
            Some(Tok::Query) => return Ok(Bound::Query),
            Some(Tok::Lt) => Cmp::Lt,
            Some(Tok::Le) => Cmp::Le,
            Some(Tok::Gt) => Cmp::Gt,
            Some(Tok::Ge) => Cmp::Ge,
            _ => {
                return Err(ParseError::new(loc.0, loc.1, "expected `=?`, `<`, `<=`, `>` or `>=` after the operator").into())
            }
        };
        let v = self.cur.number()?;
        if probability && !(0.0..=1.0).contains(&v) {
            return Err(ParseError::new(loc.0, loc.1, format!("probability bound {v} outside [0, 1]")).into());
        }
        Ok(Bound::Threshold(cmp, v))
    }

    fn is_keyword(&self, word: &str) -> bool {
        matches!(self.cur.peek(), Some(Tok::Ident(s)) if s == word)
            && matches!(self.cur.peek_at(1), Some(Tok::LBracket | Tok::Le | Tok::Eq))
    }

    /// `[t1,t2]` or `<=T`.
    fn interval(&mut self) -> Result<(f64, f64), CslError> {
        let loc = self.cur.location();
        let (t1, t2) = if self.cur.eat(&Tok::LBracket) {
            let a = self.cur.number()?;
            self.cur.expect(&Tok::Comma)?;
            let b = self.cur.number()?;
            self.cur.expect(&Tok::RBracket)?;
            (a, b)
        } else if self.cur.eat(&Tok::Le) {
            (0.0, self.cur.number()?)
        } else {
            return Err(self.cur.unexpected("a time bound `[t1,t2]` or `<=T`").into());
        };
        if !(0.0 <= t1 && t1 <= t2 && t2.is_finite()) {
            return Err(ParseError::new(loc.0, loc.1, format!("time bounds [{t1}, {t2}] need 0 ≤ t1 ≤ t2 < ∞")).into());
        }
        Ok((t1, t2))
    }

    fn prob_path(&mut self, bound: Bound) -> Result<CslFormula, CslError> {
        if self.is_keyword("F") {
            self.cur.next();
            let (t1, t2) = self.interval()?;
            let target = self.predicate()?;
            let f = CslFormula::ProbReach { bound, t1, t2, target };
            self.validate(&f)?;
            return Ok(f);
        }
        let safe = self.predicate()?;
        if !self.is_keyword("U") {
            return Err(self.cur.unexpected("`U` or `F`").into());
        }
        self.cur.next();
        let (t1, t2) = self.interval()?;
        let goal = self.predicate()?;
        let f = CslFormula::ProbUntil {
            bound,
            t1,
            t2,
            safe,
            goal,
        };
        self.validate(&f)?;
        Ok(f)
    }

    fn reward_path(&mut self, bound: Bound) -> Result<CslFormula, CslError> {
        let loc = self.cur.location();
        let kind = self.cur.ident()?;
        let f = match kind.as_str() {
            "C" => {
                self.cur.expect(&Tok::Le)?;
                let horizon = self.time()?;
                let reward = self.reward_name()?;
                CslFormula::RewardCumulative { bound, horizon, reward }
            }
            "I" => {
                self.cur.expect(&Tok::Eq)?;
                let time = self.time()?;
                let reward = self.reward_name()?;
                CslFormula::RewardInstant { bound, time, reward }
            }
            "F" => {
                self.cur.expect(&Tok::Le)?;
                let horizon = self.time()?;
                let target = self.predicate()?;
                let reward = self.reward_name()?;
                CslFormula::RewardReach {
                    bound,
                    horizon,
                    target,
                    reward,
                }
            }
            other => {
                return Err(ParseError::new(loc.0, loc.1, format!("expected `C`, `I` or `F`, found `{other}`")).into())
            }
        };
        self.validate(&f)?;
        Ok(f)
    }

    fn time(&mut self) -> Result<f64, CslError> {
        let loc = self.cur.location();
        let t = self.cur.number()?;
        if !(t >= 0.0 && t.is_finite()) {
            return Err(ParseError::new(loc.0, loc.1, format!("time {t} must be finite and non-negative")).into());
        }
        Ok(t)
    }

    fn reward_name(&mut self) -> Result<String, CslError> {
        self.cur.expect(&Tok::Colon)?;
        let loc = self.cur.location();
        let name = self.cur.ident()?;
        if self.model.reward(&name).is_none() {
            return Err(ParseError::new(loc.0, loc.1, format!("unknown reward `{name}`")).into());
        }
        Ok(name)
    }

    fn validate(&self, f: &CslFormula) -> Result<(), CslError> {
        let loc = self.cur.location();
        let preds: Vec<&Predicate> = match f {
            CslFormula::ProbReach { target, .. } | CslFormula::RewardReach { target, .. } => vec![target],
            CslFormula::ProbUntil { safe, goal, .. } => vec![safe, goal],
            _ => vec![],
        };
        normalize(&preds).map_err(|e| ParseError::new(loc.0, loc.1, e.to_string()))?;
        Ok(())
    }

    fn predicate(&mut self) -> Result<Predicate, CslError> {
        let mut p = self.pred_atom()?;
        while self.cur.eat(&Tok::Amp) {
            let q = self.pred_atom()?;
            p.satisfiable &= q.satisfiable;
            p.atoms.extend(q.atoms);
        }
        Ok(p)
    }

    fn pred_atom(&mut self) -> Result<Predicate, CslError> {
        match self.cur.peek() {
            Some(Tok::Ident(s)) if s == "true" => {
                self.cur.next();
                return Ok(Predicate::tt());
            }
            Some(Tok::Ident(s)) if s == "false" => {
                self.cur.next();
                return Ok(Predicate {
                    atoms: Vec::new(),
                    satisfiable: false,
                });
            }
            Some(Tok::LParen) => {
                let save = self.cur.pos();
                self.cur.next();
                if let Ok(p) = self.predicate() {
                    if self.cur.eat(&Tok::RParen) && !self.at_comparator() {
                        return Ok(p);
                    }
                }
                self.cur.reset(save);
            }
            _ => {}
        }
        self.linear_atom()
    }

    fn at_comparator(&self) -> bool {
        matches!(self.cur.peek(), Some(Tok::Lt | Tok::Le | Tok::Gt | Tok::Ge | Tok::Eq))
    }

    fn linear_atom(&mut self) -> Result<Predicate, CslError> {
        let loc = self.cur.location();
        let model = self.model;
        let resolve = |s: &str| -> Option<Expr> {
            if s == "N" {
                Some(Expr::SystemSize)
            } else {
                model.species_index(s).map(Expr::Var)
            }
        };
        let lhs = parse_expr(&mut self.cur, &resolve)?;
        let cmp = match self.cur.peek() {
            Some(Tok::Lt) => Cmp::Lt,
            Some(Tok::Le) => Cmp::Le,
            Some(Tok::Gt) => Cmp::Gt,
            Some(Tok::Ge) => Cmp::Ge,
            _ => return Err(self.cur.unexpected("a comparison `<`, `<=`, `>` or `>=`").into()),
        };
        self.cur.next();
        let rhs = parse_expr(&mut self.cur, &resolve)?;
        let e = Expr::sub(lhs, rhs);
        if !matches!(e.degree(), Some(0 | 1)) {
            return Err(ParseError::new(loc.0, loc.1, "predicate atoms must be linear in the species").into());
        }
        let n = model.num_species();
        let size = model.system_size;
        let zeros = vec![0.0; n];
        let row: Vec<f64> = (0..n).map(|j| e.diff(j).eval(&zeros, size)).collect();
        let constant = e.eval(&zeros, size);
        if row.iter().all(|&c| c == 0.0) {
            return Ok(Predicate {
                atoms: Vec::new(),
                satisfiable: cmp.holds(constant, 0.0),
            });
        }
        let bound = -constant / self.units.scale(size);
        Ok(Predicate {
            atoms: vec![Atom { row, cmp, bound }],
            satisfiable: true,
        })
    }
}

/// Numerical settings of a check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckConfig {
    pub h: f64,
    /// Half cell width in concentrations.
    pub dz: f64,
    pub th: f64,
    pub support_cap: usize,
    pub method: Method,
    /// Apply [`lattice_corrected`] to predicates before abstraction.
    pub lattice_correction: bool,
    pub reward_rule: RewardRule,
}

impl CheckConfig {
    pub fn new(h: f64, dz: f64) -> Self {
        Self {
            h,
            dz,
            th: DEFAULT_TH,
            support_cap: DEFAULT_SUPPORT_CAP,
            method: Method::default(),
            lattice_correction: true,
            reward_rule: RewardRule::default(),
        }
    }

    pub fn grid(&self) -> GridConfig {
        GridConfig {
            dz: self.dz,
            th: self.th,
            support_cap: self.support_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub h: f64,
    pub dz: f64,
    pub th: f64,
    pub steps: usize,
    pub truncated: f64,
    pub max_support: usize,
    pub projection: Vec<Vec<f64>>,
    pub lattice_correction: bool,
}

/// Outcome of one formula node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub formula: String,
    pub value: Option<f64>,
    pub verdict: Option<bool>,
    pub at_threshold: bool,
    pub diagnostics: Option<Diagnostics>,
    pub children: Vec<QueryResult>,
}

impl QueryResult {
    /// Whether the top-level verdict is satisfied; queries count as
    /// satisfied.
    pub fn satisfied(&self) -> bool {
        self.verdict.unwrap_or(true)
    }
}

/// Value and diagnostics of a temporal leaf, with the propagation run when
/// one was needed.
pub struct LeafOutcome {
    pub value: f64,
    pub diagnostics: Option<Diagnostics>,
    pub propagation: Option<PropagationResult>,
}

/// Checks `prop` on `model`.
pub fn check(model: &SrnModel, prop: &Property, cfg: &CheckConfig) -> Result<QueryResult, CslError> {
    check_node(model, prop, &prop.formula, cfg)
}

fn check_node(model: &SrnModel, prop: &Property, f: &CslFormula, cfg: &CheckConfig) -> Result<QueryResult, CslError> {
    let text = f.display(&prop.species, prop.units, model.system_size).to_string();
    match f {
        CslFormula::Not(g) => {
            let child = check_node(model, prop, g, cfg)?;
            Ok(QueryResult {
                formula: text,
                value: None,
                verdict: child.verdict.map(|v| !v),
                at_threshold: child.at_threshold,
                diagnostics: None,
                children: vec![child],
            })
        }
        CslFormula::And(a, b) => {
            let ca = check_node(model, prop, a, cfg)?;
            let cb = check_node(model, prop, b, cfg)?;
            Ok(QueryResult {
                formula: text,
                value: None,
                verdict: Some(ca.satisfied() && cb.satisfied()),
                at_threshold: ca.at_threshold || cb.at_threshold,
                diagnostics: None,
                children: vec![ca, cb],
            })
        }
        leaf => {
            let out = evaluate_leaf(model, prop, leaf, cfg, None).map_err(|e| CslError::Context {
                formula: text.clone(),
                source: Box::new(e),
            })?;
            let (verdict, at_threshold) = match leaf.bound() {
                Some(Bound::Threshold(cmp, p)) => (Some(cmp.holds(out.value, p)), (out.value - p).abs() < THRESHOLD_EPS),
                _ => (None, false),
            };
            Ok(QueryResult {
                formula: text,
                value: Some(out.value),
                verdict,
                at_threshold,
                diagnostics: out.diagnostics,
                children: Vec::new(),
            })
        }
    }
}

fn diagnostics(cfg: &CheckConfig, rows: &[Vec<f64>], r: &PropagationResult) -> Diagnostics {
    Diagnostics {
        h: cfg.h,
        dz: cfg.dz,
        th: cfg.th,
        steps: r.steps(),
        truncated: *r.truncated.last().expect("step 0"),
        max_support: r.max_support,
        projection: rows.to_vec(),
        lattice_correction: cfg.lattice_correction,
    }
}

fn for_abstraction(model: &SrnModel, cfg: &CheckConfig, p: &Predicate) -> Predicate {
    if cfg.lattice_correction {
        lattice_corrected(p, model.system_size)
    } else {
        p.clone()
    }
}

fn reward_structure(model: &SrnModel, prop: &Property, name: &str) -> Result<RewardStructure, CslError> {
    let r = model
        .reward(name)
        .ok_or_else(|| CslError::Invalid(format!("unknown reward `{name}`")))?;
    Ok(RewardStructure::new(r.expr.clone(), prop.units))
}

/// Evaluates one temporal leaf. `snapshot_step` requests the support
/// distribution at that step.
pub fn evaluate_leaf(
    model: &SrnModel,
    prop: &Property,
    leaf: &CslFormula,
    cfg: &CheckConfig,
    snapshot_step: Option<usize>,
) -> Result<LeafOutcome, CslError> {
    let h = cfg.h;
    match leaf {
        CslFormula::ProbReach { t1, t2, target, .. } => {
            let norm = normalize(&[&for_abstraction(model, cfg, target)])?;
            if norm.rows.is_empty() {
                return Ok(constant_leaf(target.satisfiable));
            }
            let k2 = floor_steps(*t2, h);
            let plan = Plan {
                survive: TargetRegion::full(norm.rows.len()),
                success: norm.regions[0].clone(),
                window: (floor_steps(*t1, h), k2),
                last_step: k2,
                reward: None,
                reward_rule: cfg.reward_rule,
                snapshot_step,
            };
            run_plan(model, cfg, &norm.rows, &plan, k2 as f64 * h)
        }
        CslFormula::ProbUntil { t1, t2, safe, goal, .. } => {
            let norm = normalize(&[&for_abstraction(model, cfg, safe), &for_abstraction(model, cfg, goal)])?;
            if norm.rows.is_empty() {
                let v = goal.satisfiable && (*t1 == 0.0 || safe.satisfiable);
                return Ok(constant_leaf(v));
            }
            let k2 = floor_steps(*t2, h);
            let plan = Plan {
                survive: norm.regions[0].clone(),
                success: norm.regions[1].clone(),
                window: (floor_steps(*t1, h), k2),
                last_step: k2,
                reward: None,
                reward_rule: cfg.reward_rule,
                snapshot_step,
            };
            run_plan(model, cfg, &norm.rows, &plan, k2 as f64 * h)
        }
        CslFormula::RewardCumulative { horizon, reward, .. } => {
            let rho = reward_structure(model, prop, reward)?;
            let sol = solve_cla(model, *horizon, h, cfg.method)?;
            Ok(LeafOutcome {
                value: rewards::cumulative(&sol, &rho, *horizon)?,
                diagnostics: None,
                propagation: None,
            })
        }
        CslFormula::RewardInstant { time, reward, .. } => {
            let rho = reward_structure(model, prop, reward)?;
            let sol = solve_cla(model, *time, h, cfg.method)?;
            Ok(LeafOutcome {
                value: rewards::instantaneous(&sol, &rho, *time)?.value,
                diagnostics: None,
                propagation: None,
            })
        }
        CslFormula::RewardReach {
            horizon, target, reward, ..
        } => {
            let rho = reward_structure(model, prop, reward)?;
            let norm = normalize(&[&for_abstraction(model, cfg, target)])?;
            let (rows, projected) = project_reward(&rho, &norm.rows, model.num_species(), model.system_size)?;
            let mut region = norm.regions[0].clone();
            if norm.rows.is_empty() && !target.satisfiable {
                region = TargetRegion::empty(rows.len());
            } else if norm.rows.is_empty() {
                region = TargetRegion::full(rows.len());
            }
            region.bounds.resize(rows.len(), Interval::FULL);
            let n = floor_steps(*horizon, h);
            let f = |z: &[f64]| projected.eval(z);
            let plan = Plan {
                survive: TargetRegion::full(rows.len()),
                success: region,
                window: (0, n),
                last_step: n,
                reward: Some(&f),
                reward_rule: cfg.reward_rule,
                snapshot_step,
            };
            let mut out = run_plan(model, cfg, &rows, &plan, n as f64 * h)?;
            let series = out
                .propagation
                .as_ref()
                .and_then(|r| r.reward.as_ref())
                .expect("reward attached");
            out.value = *series.last().expect("reward series starts at 0");
            Ok(out)
        }
        CslFormula::Not(_) | CslFormula::And(..) => Err(CslError::Invalid("not a temporal leaf".into())),
    }
}

fn constant_leaf(v: bool) -> LeafOutcome {
    LeafOutcome {
        value: if v { 1.0 } else { 0.0 },
        diagnostics: None,
        propagation: None,
    }
}

fn solve_and_project(model: &SrnModel, cfg: &CheckConfig, rows: &[Vec<f64>], horizon: f64) -> Result<(ClaSolution, crate::cla::ProjectedStats), CslError> {
    let sol = solve_cla(model, horizon, cfg.h, cfg.method)?;
    let stats = project(&sol, &ProjectionSpec::new(rows.to_vec())?)?;
    Ok((sol, stats))
}

fn run_plan(model: &SrnModel, cfg: &CheckConfig, rows: &[Vec<f64>], plan: &Plan<'_>, horizon: f64) -> Result<LeafOutcome, CslError> {
    let (_, stats) = solve_and_project(model, cfg, rows, horizon)?;
    let r = propagate(&stats, plan, &cfg.grid())?;
    Ok(LeafOutcome {
        value: r.value(),
        diagnostics: Some(diagnostics(cfg, rows, &r)),
        propagation: Some(r),
    })
}

/// Values of a temporal leaf for each upper time bound in `times`. When the
/// lower bound is 0 a single propagation run yields the whole curve.
pub fn curve(model: &SrnModel, prop: &Property, leaf: &CslFormula, cfg: &CheckConfig, times: &[f64]) -> Result<Vec<f64>, CslError> {
    let Some(t_max) = times.iter().copied().reduce(f64::max) else {
        return Ok(Vec::new());
    };
    let h = cfg.h;
    let single_run = match leaf {
        CslFormula::ProbReach { t1, .. } | CslFormula::ProbUntil { t1, .. } => *t1 == 0.0,
        CslFormula::RewardReach { .. } => true,
        _ => false,
    };
    if let CslFormula::RewardCumulative { reward, .. } | CslFormula::RewardInstant { reward, .. } = leaf {
        let rho = reward_structure(model, prop, reward)?;
        let sol = solve_cla(model, t_max, h, cfg.method)?;
        return times
            .iter()
            .map(|&t| {
                Ok(match leaf {
                    CslFormula::RewardCumulative { .. } => rewards::cumulative(&sol, &rho, t)?,
                    _ => rewards::instantaneous(&sol, &rho, t)?.value,
                })
            })
            .collect();
    }
    if !single_run {
        return times
            .iter()
            .map(|&t| Ok(evaluate_leaf(model, prop, &leaf.with_time_bound(t), cfg, None)?.value))
            .collect();
    }
    let out = evaluate_leaf(model, prop, &leaf.with_time_bound(t_max), cfg, None)?;
    let Some(r) = out.propagation else {
        return Ok(vec![out.value; times.len()]);
    };
    let series = match leaf {
        CslFormula::RewardReach { .. } => r.reward.clone().expect("reward attached"),
        _ => r.success.clone(),
    };
    Ok(times
        .iter()
        .map(|&t| {
            let k = floor_steps(t, h).min(series.len() - 1);
            series[k]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;

    const GENE: &str = "\
system_size: 100
species: mRNA Pro
init: mRNA=0 Pro=0
reaction:  -> mRNA            @ 0.5
reaction: mRNA -> mRNA + Pro  @ 0.0058 * mRNA
reaction: mRNA ->             @ 0.0029 * mRNA
reaction: Pro ->              @ 0.0001 * Pro
reward diff = mRNA - Pro
reward one = 1
";

    fn gene() -> SrnModel {
        parse_model(GENE).unwrap()
    }

    fn parse(text: &str) -> Result<Property, CslError> {
        parse_property(text, &gene(), Units::Concentration)
    }

    #[test]
    fn parses_until_example() {
        let p = parse("P>0.6 [ (Pro < 0.1) U[0,50] (mRNA > 0.3) ]").unwrap();
        match p.formula {
            CslFormula::ProbUntil {
                bound, t1, t2, safe, goal,
            } => {
                assert_eq!(bound, Bound::Threshold(Cmp::Gt, 0.6));
                assert_eq!((t1, t2), (0.0, 50.0));
                assert_eq!(safe.atoms[0].row, vec![0.0, 1.0]);
                assert_eq!(goal.atoms[0].cmp, Cmp::Gt);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn affine_offset_becomes_single_row() {
        let p = parse("P=? [ F[0,100] mRNA > Pro + 0.2 ]").unwrap();
        let CslFormula::ProbReach { target, .. } = &p.formula else { panic!() };
        let norm = normalize(&[target]).unwrap();
        assert_eq!(norm.rows, vec![vec![1.0, -1.0]]);
        assert_eq!(norm.regions[0].bounds[0].lo, 0.2);
    }

    #[test]
    fn counts_are_scaled() {
        let p = parse_property("P=? [ F[0,100] mRNA > Pro + 20 ]", &gene(), Units::Counts).unwrap();
        let q = parse("P=? [ F[0,100] mRNA > Pro + 0.2 ]").unwrap();
        assert_eq!(p.formula, q.formula);
    }

    #[test]
    fn trivial_and_constant_predicates() {
        let m = gene();
        let cfg = CheckConfig::new(1.0, 0.005);
        let p = parse("P=? [ F[0,0] true ]").unwrap();
        assert_eq!(check(&m, &p, &cfg).unwrap().value, Some(1.0));
        let p = parse("P=? [ F[0,5] false ]").unwrap();
        assert_eq!(check(&m, &p, &cfg).unwrap().value, Some(0.0));
        let p = parse("P=? [ F[0,5] 1 < 2 ]").unwrap();
        assert_eq!(check(&m, &p, &cfg).unwrap().value, Some(1.0));
    }

    #[test]
    fn parse_errors() {
        assert!(parse("P=? [ F[0,100] mRNA * Pro > 1 ]").is_err());
        assert!(parse("P=? [ F[5,1] mRNA > 1 ]").is_err());
        assert!(parse("P>1.5 [ F[0,1] mRNA > 1 ]").is_err());
        assert!(parse("P=? [ F[0,1] mRNA > 1 & Pro > 1 & mRNA + Pro < 3 ]").is_err());
        assert!(parse("!(P=? [ F[0,1] mRNA > 1 ])").is_err());
        assert!(parse("P=? [ F[0,1] Q > 1 ]").is_err());
        assert!(parse("R=? [ C<=5 : nope ]").is_err());
        assert!(parse("P=? [ F[0,1] mRNA > 1 ] extra").is_err());
        let e = parse("P=? [ F[0,1] mRNA >> 1 ]").unwrap_err();
        assert!(matches!(e, CslError::Parse(ParseError { line: 1, .. })));
    }

    #[test]
    fn parenthesized_expressions_and_predicates() {
        let a = parse("P=? [ F[0,1] (mRNA - Pro) > 0.2 ]").unwrap();
        let b = parse("P=? [ F[0,1] (mRNA > Pro + 0.2) ]").unwrap();
        let CslFormula::ProbReach { target: ta, .. } = a.formula else { panic!() };
        let CslFormula::ProbReach { target: tb, .. } = b.formula else { panic!() };
        let (na, nb) = (normalize(&[&ta]).unwrap(), normalize(&[&tb]).unwrap());
        assert_eq!(na, nb);
    }

    #[test]
    fn lattice_correction_uses_midpoints() {
        let bounds = |src: &str| -> Vec<f64> {
            let p = parse(&format!("P=? [ F[0,1] {src} ]")).unwrap();
            let CslFormula::ProbReach { target, .. } = p.formula else { panic!() };
            lattice_corrected(&target, 100.0).atoms.iter().map(|a| a.bound * 100.0).collect()
        };
        let close = |a: Vec<f64>, b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9);
        assert!(close(bounds("mRNA > Pro + 0.2"), &[20.5]));
        assert!(close(bounds("mRNA >= 1.75"), &[174.5]));
        assert!(close(bounds("Pro < 0.1 & Pro <= 0.09"), &[9.5, 9.5]));
        assert!(close(bounds("mRNA > 0.205"), &[20.5]));
        assert!(close(bounds("2*mRNA > 0.2"), &[21.0]));
        assert!(close(bounds("2*mRNA + 4*Pro >= 0.21"), &[21.0]));
        assert!(close(bounds("0.5*mRNA > 0.2"), &[20.0]));
    }

    #[test]
    fn comparator_normalization_is_bitwise() {
        let a = parse("P=? [ F[0,1] mRNA - Pro >= 0.2 ]").unwrap();
        let b = parse("P=? [ F[0,1] Pro - mRNA <= -0.2 ]").unwrap();
        let CslFormula::ProbReach { target: ta, .. } = a.formula else { panic!() };
        let CslFormula::ProbReach { target: tb, .. } = b.formula else { panic!() };
        assert_eq!(normalize(&[&ta]).unwrap(), normalize(&[&tb]).unwrap());
    }

    #[test]
    fn scaled_rows_share_an_axis() {
        let p = parse("P=? [ F[0,1] 2*mRNA < 1 & mRNA > 0.1 & -3*mRNA > -2.4 ]").unwrap();
        let CslFormula::ProbReach { target, .. } = p.formula else { panic!() };
        let n = normalize(&[&target]).unwrap();
        assert_eq!(n.rows.len(), 1);
        assert_eq!(n.rows, vec![vec![2.0, 0.0]]);
        assert_eq!(n.regions[0].bounds[0], Interval::new(0.2, 1.0));
    }

    #[test]
    fn boolean_combinations() {
        let m = gene();
        let cfg = CheckConfig::new(5.0, 0.005);
        let sat = "P>0.5 [ F[0,10] true ]";
        let unsat = "P<0.5 [ F[0,10] true ]";
        let r = check(&m, &parse(&format!("{sat} & {sat}")).unwrap(), &cfg).unwrap();
        assert_eq!(r.verdict, Some(true));
        let r = check(&m, &parse(&format!("{sat} & {unsat}")).unwrap(), &cfg).unwrap();
        assert_eq!(r.verdict, Some(false));
        let r = check(&m, &parse(&format!("!!({unsat})")).unwrap(), &cfg).unwrap();
        assert_eq!(r.verdict, Some(false));
        let r = check(&m, &parse("P>=1 [ F[0,10] true ]").unwrap(), &cfg).unwrap();
        assert!(r.at_threshold);
    }

    #[test]
    fn rewards_dispatch() {
        let m = gene();
        let cfg = CheckConfig::new(5.0, 0.005);
        let r = check(&m, &parse("R=? [ C<=20 : one ]").unwrap(), &cfg).unwrap();
        assert!((r.value.unwrap() - 20.0).abs() < 1e-12);
        let r = check(&m, &parse("R=? [ I=0 : diff ]").unwrap(), &cfg).unwrap();
        assert_eq!(r.value, Some(0.0));
        let r = check(&m, &parse("R=? [ F<=0 mRNA >= 0.3 : diff ]").unwrap(), &cfg).unwrap();
        assert_eq!(r.value, Some(0.0));
    }

    #[test]
    fn reach_equals_until_with_true_guard() {
        let m = gene();
        let cfg = CheckConfig::new(1.85, 0.005);
        let r = check(&m, &parse("P=? [ F[0,37] mRNA > Pro + 0.2 ]").unwrap(), &cfg).unwrap();
        let u = check(&m, &parse("P=? [ true U[0,37] mRNA > Pro + 0.2 ]").unwrap(), &cfg).unwrap();
        assert!((r.value.unwrap() - u.value.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn curve_matches_individual_runs() {
        let m = gene();
        let cfg = CheckConfig::new(1.85, 0.005);
        let p = parse("P=? [ F[0,40] mRNA > Pro + 0.2 ]").unwrap();
        let times = [10.0, 25.0, 40.0];
        let c = curve(&m, &p, &p.formula, &cfg, &times).unwrap();
        for (t, v) in times.iter().zip(&c) {
            let single = evaluate_leaf(&m, &p, &p.formula.with_time_bound(*t), &cfg, None).unwrap().value;
            assert!((single - v).abs() < 1e-15, "T={t}");
        }
        assert!(c.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn display_round_trips() {
        let m = gene();
        for src in [
            "P>0.6 [ (Pro < 0.1) U[0,50] (mRNA > 0.3) ]",
            "P=? [ F[0,100] mRNA - Pro > 0.2 ]",
            "!(P<0.2 [ F[1,2] mRNA >= 0.1 & Pro < 2 ]) & R>3 [ C<=5 : diff ]",
            "R=? [ F<=35 mRNA >= 0.3 : diff ]",
        ] {
            let p = parse(src).unwrap();
            let shown = p.formula.display(&m.species, Units::Concentration, 100.0).to_string();
            let again = parse(&shown).unwrap_or_else(|e| panic!("{shown}: {e}"));
            assert_eq!(p.formula, again.formula, "{shown}");
        }
    }
}
