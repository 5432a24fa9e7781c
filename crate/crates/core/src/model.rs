//! Stochastic reaction networks: model files, propensities and the
//! density-dependent drift, Jacobian and diffusion of the rate equations.
//!
//! Every reaction carries its propensity `α(x)` as an expression over
//! species counts. The normalized rate is `β(φ) = α(N·φ)/N`, so
//! `∂β/∂φ_j = ∂α/∂x_j (N·φ)` and only count-space derivatives are stored.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{parse_expr, Expr};
use crate::lex::{tokenize, Cursor, ParseError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model syntax error at {0}")]
    Syntax(#[from] ParseError),
    #[error("reaction {reaction} has a non-finite or negative rate {value} at state {state:?}")]
    RateEvaluation {
        reaction: usize,
        value: f64,
        state: Vec<f64>,
    },
    #[error("reaction {reaction} produced a non-finite rate")]
    NonFinite { reaction: usize },
}

/// Unit of species variables in predicates and rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Units {
    /// Concentrations `x̂ = x / N`.
    #[default]
    Concentration,
    /// Molecule counts `x`.
    Counts,
}

impl Units {
    /// Factor converting a concentration into this unit.
    pub fn scale(self, system_size: f64) -> f64 {
        match self {
            Units::Concentration => 1.0,
            Units::Counts => system_size,
        }
    }
}

/// How a reaction's rate was specified.
#[derive(Debug, Clone, PartialEq)]
pub enum RateSpec {
    /// Mass-action kinetics with rate constant `k`.
    MassAction(f64),
    /// A general propensity over species counts, used verbatim.
    Expression(Expr),
}

#[derive(Debug, Clone)]
pub struct Reaction {
    pub reactants: Vec<u32>,
    pub products: Vec<u32>,
    pub rate: RateSpec,
    propensity: Expr,
    gradient: Vec<Expr>,
}

impl Reaction {
    /// Builds a reaction, deriving its propensity expression and gradient.
    pub fn new(reactants: Vec<u32>, products: Vec<u32>, rate: RateSpec) -> Self {
        let propensity = match &rate {
            RateSpec::MassAction(k) => mass_action_propensity(*k, &reactants),
            RateSpec::Expression(e) => e.clone(),
        };
        let gradient = (0..reactants.len()).map(|j| propensity.diff(j)).collect();
        Self {
            reactants,
            products,
            rate,
            propensity,
            gradient,
        }
    }

    pub fn state_change(&self) -> Vec<f64> {
        self.products
            .iter()
            .zip(&self.reactants)
            .map(|(&p, &r)| p as f64 - r as f64)
            .collect()
    }

    pub fn propensity_expr(&self) -> &Expr {
        &self.propensity
    }
}

/// `k · Π r_i! / N^{|r|-1} · Π C(x_i, r_i)` written as a falling-factorial
/// product. Zero-order reactions keep `α = k`.
fn mass_action_propensity(k: f64, reactants: &[u32]) -> Expr {
    let order: u32 = reactants.iter().sum();
    if order == 0 {
        return Expr::Const(k);
    }
    let mut e = Expr::Const(k);
    if order > 1 {
        e = Expr::div(e, Expr::pow(Expr::SystemSize, order as i32 - 1));
    }
    for (i, &r) in reactants.iter().enumerate() {
        for j in 0..r {
            let factor = Expr::sub(Expr::Var(i), Expr::Const(j as f64));
            e = Expr::mul(e, factor);
        }
    }
    e
}

#[derive(Debug, Clone)]
pub struct Reward {
    pub name: String,
    pub expr: Expr,
}

/// A validated reaction network with its system size and initial counts.
#[derive(Debug, Clone)]
pub struct SrnModel {
    pub species: Vec<String>,
    pub reactions: Vec<Reaction>,
    pub system_size: f64,
    pub initial_state: Vec<u64>,
    pub rewards: Vec<Reward>,
}

/// Drift, Jacobian and diffusion of the rate equations at one point.
pub struct LocalDynamics {
    pub drift: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub diffusion: DMatrix<f64>,
}

impl SrnModel {
    pub fn num_species(&self) -> usize {
        self.species.len()
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s == name)
    }

    pub fn reward(&self, name: &str) -> Option<&Reward> {
        self.rewards.iter().find(|r| r.name == name)
    }

    /// Returns a copy with a different system size `N`. Count-space
    /// propensities reference `N` symbolically, so nothing else changes.
    pub fn with_system_size(&self, system_size: f64) -> Self {
        let mut m = self.clone();
        m.system_size = system_size;
        m
    }

    /// Returns a copy at system size `N'` with the initial counts rescaled
    /// to keep the initial concentrations (rounded to whole molecules).
    pub fn rescaled(&self, system_size: f64) -> Self {
        let mut m = self.with_system_size(system_size);
        let f = system_size / self.system_size;
        for x in &mut m.initial_state {
            *x = (*x as f64 * f).round() as u64;
        }
        m
    }

    /// Initial concentrations `x0 / N`.
    pub fn initial_concentration(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.species.len(),
            self.initial_state.iter().map(|&x| x as f64 / self.system_size),
        )
    }

    /// Propensity `α_τ(x)` at count vector `x`.
    pub fn propensity(&self, reaction: usize, x: &[f64]) -> Result<f64, ModelError> {
        let v = self.reactions[reaction].propensity.eval(x, self.system_size);
        if !v.is_finite() || v < 0.0 {
            return Err(ModelError::RateEvaluation {
                reaction,
                value: v,
                state: x.to_vec(),
            });
        }
        Ok(v)
    }

    /// Normalized rate `β_τ(φ) = α_τ(Nφ)/N`. Negative values are allowed
    /// here: mass-action falling factorials dip below zero for fractional
    /// concentrations under one molecule.
    fn beta(&self, reaction: usize, counts: &[f64]) -> Result<f64, ModelError> {
        let v = self.reactions[reaction].propensity.eval(counts, self.system_size) / self.system_size;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ModelError::NonFinite { reaction })
        }
    }

    fn counts(&self, phi: &[f64]) -> Vec<f64> {
        phi.iter().map(|p| p * self.system_size).collect()
    }

    /// Rate-equation drift `F(φ) = Σ_τ υ_τ β_τ(φ)`.
    pub fn drift(&self, phi: &[f64]) -> Result<DVector<f64>, ModelError> {
        let x = self.counts(phi);
        let mut f = DVector::zeros(self.num_species());
        for (t, r) in self.reactions.iter().enumerate() {
            let b = self.beta(t, &x)?;
            for (i, v) in r.state_change().iter().enumerate() {
                f[i] += v * b;
            }
        }
        Ok(f)
    }

    /// Exact Jacobian of the drift, `J_ij = ∂F_i/∂φ_j`.
    pub fn jacobian(&self, phi: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        Ok(self.local_dynamics(phi)?.jacobian)
    }

    /// Diffusion matrix `W(φ) = Σ_τ υ_τ υ_τᵀ β_τ(φ)`.
    pub fn diffusion(&self, phi: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        Ok(self.local_dynamics(phi)?.diffusion)
    }

    /// Drift, Jacobian and diffusion evaluated in one pass.
    ///
    /// The diffusion uses `max(β, 0)` so that `W` stays positive
    /// semi-definite where a falling factorial goes negative.
    pub fn local_dynamics(&self, phi: &[f64]) -> Result<LocalDynamics, ModelError> {
        let n = self.num_species();
        let x = self.counts(phi);
        let mut drift = DVector::zeros(n);
        let mut jacobian = DMatrix::zeros(n, n);
        let mut diffusion = DMatrix::zeros(n, n);
        for (t, r) in self.reactions.iter().enumerate() {
            let b = self.beta(t, &x)?;
            let v = r.state_change();
            let grad: Vec<f64> = r.gradient.iter().map(|g| g.eval(&x, self.system_size)).collect();
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::NonFinite { reaction: t });
            }
            let bw = b.max(0.0);
            for i in 0..n {
                if v[i] == 0.0 {
                    continue;
                }
                drift[i] += v[i] * b;
                for j in 0..n {
                    jacobian[(i, j)] += v[i] * grad[j];
                    diffusion[(i, j)] += v[i] * v[j] * bw;
                }
            }
        }
        Ok(LocalDynamics {
            drift,
            jacobian,
            diffusion,
        })
    }
}

/// Parses and validates a model file.
///
/// ```text
/// system_size: 100
/// species: mRNA Pro
/// init: mRNA=0 Pro=0
/// reaction:  -> mRNA            @ 0.5
/// reaction: mRNA -> mRNA + Pro  @ 0.0058 * mRNA
/// reward diff = mRNA - Pro
/// ```
pub fn parse_model(text: &str) -> Result<SrnModel, ModelError> {
    struct Line<'a> {
        no: usize,
        col: usize,
        body: &'a str,
    }
    let mut system_size: Option<(f64, usize)> = None;
    let mut species_line: Option<Line<'_>> = None;
    let mut init_line: Option<Line<'_>> = None;
    let mut reaction_lines = Vec::new();
    let mut reward_lines = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let no = idx + 1;
        let content = strip_comment(raw);
        let trimmed = content.trim_start();
        if trimmed.trim().is_empty() {
            continue;
        }
        let indent = content.len() - trimmed.len();
        let (key, rest, rest_col) = split_key(trimmed, indent);
        let line = Line {
            no,
            col: rest_col,
            body: rest,
        };
        match key {
            "system_size" | "N" => {
                let v: f64 = rest.trim().parse().map_err(|_| {
                    ParseError::new(no, rest_col, format!("invalid system size `{}`", rest.trim()))
                })?;
                if !(v > 0.0 && v.is_finite()) {
                    return Err(ParseError::new(no, rest_col, "system size must be positive").into());
                }
                system_size = Some((v, no));
            }
            "species" => species_line = Some(line),
            "init" => init_line = Some(line),
            "reaction" => reaction_lines.push(line),
            "reward" => reward_lines.push(line),
            other => {
                return Err(ParseError::new(no, indent + 1, format!("unknown directive `{other}`")).into())
            }
        }
    }

    let end = text.lines().count().max(1);
    let (system_size, _) =
        system_size.ok_or_else(|| ParseError::new(end, 1, "missing `system_size` line"))?;
    let species_line =
        species_line.ok_or_else(|| ParseError::new(end, 1, "missing `species` line"))?;

    let mut species: Vec<String> = Vec::new();
    for (col, word) in words(species_line.body, species_line.col) {
        if !is_identifier(word) {
            return Err(ParseError::new(species_line.no, col, format!("invalid species name `{word}`")).into());
        }
        if word == "N" {
            return Err(ParseError::new(species_line.no, col, "`N` is reserved for the system size").into());
        }
        if species.iter().any(|s| s == word) {
            return Err(ParseError::new(species_line.no, col, format!("duplicate species `{word}`")).into());
        }
        species.push(word.to_string());
    }
    let index: HashMap<&str, usize> = species.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let init_line = init_line.ok_or_else(|| ParseError::new(end, 1, "missing `init` line"))?;
    let mut initial_state = vec![0u64; species.len()];
    for (col, word) in words(init_line.body, init_line.col) {
        let (name, value) = word
            .split_once('=')
            .ok_or_else(|| ParseError::new(init_line.no, col, format!("expected `name=count`, found `{word}`")))?;
        let i = *index
            .get(name)
            .ok_or_else(|| ParseError::new(init_line.no, col, format!("unknown species `{name}`")))?;
        initial_state[i] = value.parse().map_err(|_| {
            ParseError::new(init_line.no, col + name.len() + 1, format!("invalid count `{value}`"))
        })?;
    }

    let resolve = |s: &str| -> Option<Expr> {
        if s == "N" {
            Some(Expr::SystemSize)
        } else {
            index.get(s).map(|&i| Expr::Var(i))
        }
    };

    let mut reactions = Vec::new();
    for line in &reaction_lines {
        let (lhs, rhs, rate_col, rate_src) = split_reaction(line.body, line.no, line.col)?;
        let reactants = parse_complex(lhs.1, line.no, lhs.0, &index)?;
        let products = parse_complex(rhs.1, line.no, rhs.0, &index)?;
        let toks = tokenize(rate_src, line.no, rate_col)?;
        let mut cur = Cursor::new(&toks, (line.no, rate_col + rate_src.len()));
        let expr = parse_expr(&mut cur, &resolve)?;
        if !cur.at_end() {
            return Err(cur.unexpected("end of rate expression").into());
        }
        let has_reactants = reactants.iter().any(|&r| r > 0);
        let rate = match expr {
            Expr::Const(k) if k < 0.0 => {
                return Err(ParseError::new(line.no, rate_col, format!("negative rate constant {k}")).into())
            }
            Expr::Const(k) if has_reactants => RateSpec::MassAction(k),
            Expr::Neg(ref inner) if matches!(**inner, Expr::Const(_)) => {
                return Err(ParseError::new(line.no, rate_col, "negative rate constant").into())
            }
            e => RateSpec::Expression(e),
        };
        reactions.push(Reaction::new(reactants, products, rate));
    }

    let mut rewards: Vec<Reward> = Vec::new();
    for line in &reward_lines {
        let (name, eq_rest) = line
            .body
            .split_once('=')
            .ok_or_else(|| ParseError::new(line.no, line.col, "expected `reward name = expression`"))?;
        let name = name.trim();
        if !is_identifier(name) {
            return Err(ParseError::new(line.no, line.col, format!("invalid reward name `{name}`")).into());
        }
        if rewards.iter().any(|r| r.name == name) {
            return Err(ParseError::new(line.no, line.col, format!("duplicate reward `{name}`")).into());
        }
        let col = line.col + line.body.len() - eq_rest.len();
        let toks = tokenize(eq_rest, line.no, col)?;
        let mut cur = Cursor::new(&toks, (line.no, col + eq_rest.len()));
        let expr = parse_expr(&mut cur, &resolve)?;
        if !cur.at_end() {
            return Err(cur.unexpected("end of reward expression").into());
        }
        rewards.push(Reward {
            name: name.to_string(),
            expr,
        });
    }

    Ok(SrnModel {
        species,
        reactions,
        system_size,
        initial_state,
        rewards,
    })
}

fn strip_comment(line: &str) -> &str {
    let cut = [line.find('#'), line.find("//")]
        .into_iter()
        .flatten()
        .min()
        .unwrap_or(line.len());
    &line[..cut]
}

/// Splits `key: rest` (or `reward name = ...`). Returns the key, the rest and
/// the 1-based column where the rest starts.
fn split_key(line: &str, indent: usize) -> (&str, &str, usize) {
    let key_end = line
        .find(|c: char| !(c.is_alphanumeric() || c == '_'))
        .unwrap_or(line.len());
    let key = &line[..key_end];
    let mut rest = &line[key_end..];
    let mut offset = key_end;
    let trimmed = rest.trim_start();
    offset += rest.len() - trimmed.len();
    rest = trimmed;
    if let Some(r) = rest.strip_prefix(':') {
        rest = r;
        offset += 1;
    }
    (key, rest, indent + offset + 1)
}

fn words(body: &str, col0: usize) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in body.char_indices() {
        let sep = c.is_whitespace() || c == ',';
        match (sep, start) {
            (true, Some(s)) => {
                out.push((col0 + s, &body[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((col0 + s, &body[s..]));
    }
    out
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_')
        && chars.all(|c| c.is_alphanumeric() || c == '_')
}

type Span<'a> = (usize, &'a str);

fn split_reaction(body: &str, no: usize, col: usize) -> Result<(Span<'_>, Span<'_>, usize, &str), ParseError> {
    let arrow = body
        .find("->")
        .ok_or_else(|| ParseError::new(no, col, "reaction is missing `->`"))?;
    let at = body
        .find('@')
        .ok_or_else(|| ParseError::new(no, col, "reaction is missing `@ rate`"))?;
    if at < arrow {
        return Err(ParseError::new(no, col + at, "`@ rate` must follow the products"));
    }
    let lhs = (col, &body[..arrow]);
    let rhs = (col + arrow + 2, &body[arrow + 2..at]);
    Ok((lhs, rhs, col + at + 1, &body[at + 1..]))
}

fn parse_complex(
    src: &str,
    no: usize,
    col: usize,
    index: &HashMap<&str, usize>,
) -> Result<Vec<u32>, ParseError> {
    let mut out = vec![0u32; index.len()];
    if src.trim().is_empty() || src.trim() == "0" || src.trim() == "∅" {
        return Ok(out);
    }
    let mut offset = 0;
    for term in src.split('+') {
        let term_col = col + offset + (term.len() - term.trim_start().len());
        offset += term.len() + 1;
        let t = term.trim();
        if t.is_empty() {
            return Err(ParseError::new(no, term_col, "empty term in reaction complex"));
        }
        let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
        let (coef, name) = if digits > 0 {
            let c: u32 = t[..digits]
                .parse()
                .map_err(|_| ParseError::new(no, term_col, "invalid stoichiometric coefficient"))?;
            let rest = t[digits..].trim_start();
            let rest = rest.strip_prefix('*').unwrap_or(rest).trim_start();
            (c, rest)
        } else {
            (1, t)
        };
        match index.get(name) {
            Some(&i) => out[i] += coef,
            None => {
                return Err(ParseError::new(no, term_col, format!("unknown species `{name}`")));
            }
        }
    }
    Ok(out)
}
