//! Instantaneous, cumulative and bounded-reachability rewards on the CLA.
//!
//! Rewards are expressions over species variables, read either as counts or
//! as concentrations. Under the CLA the state at time `T` is Gaussian with
//! mean `Φ(T)` and covariance `V(T)/N` in concentrations.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::abstraction::{propagate, AbstractionError, GridConfig, Plan, PropagationResult, RewardRule, TargetRegion};
use crate::cla::{ClaError, ClaSolution, ProjectedStats};
use crate::expr::Expr;
use crate::gauss::gauss_hermite;
use crate::model::Units;

/// Cap on reward magnitudes.
pub const C_MAX: f64 = 1e80;

/// Gauss–Hermite order per dimension for non-quadratic rewards.
pub const QUADRATURE_ORDER: usize = 64;

/// Truncation of the quadrature box in standard deviations.
const QUADRATURE_SIGMAS: f64 = 8.0;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error(transparent)]
    Cla(#[from] ClaError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error("reward depends on {0} species; quadrature supports at most 2")]
    TooManyVariables(usize),
    #[error("reward is not a function of the projected coordinates: {0}")]
    NotProjectable(String),
    #[error("invalid reward request: {0}")]
    Invalid(String),
}

/// A state reward `ρ` with the unit of its species variables.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardStructure {
    pub expr: Expr,
    pub units: Units,
    pub cap: f64,
}

impl RewardStructure {
    pub fn new(expr: Expr, units: Units) -> Self {
        Self { expr, units, cap: C_MAX }
    }

    /// `ρ` at a state given in the reward's own units, capped at `±cap`.
    pub fn eval(&self, x: &[f64], system_size: f64) -> f64 {
        let v = self.expr.eval(x, system_size);
        if v.is_nan() {
            v
        } else {
            v.clamp(-self.cap, self.cap)
        }
    }

    /// `ρ` at concentrations `x̂`.
    pub fn eval_concentration(&self, xhat: &[f64], system_size: f64) -> f64 {
        let s = self.units.scale(system_size);
        let x: Vec<f64> = xhat.iter().map(|v| v * s).collect();
        self.eval(&x, system_size)
    }

    /// Polynomial degree, `None` for non-polynomial expressions.
    pub fn degree(&self) -> Option<u32> {
        self.expr.degree()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardMethod {
    Analytic,
    GaussHermite { order: usize, sigmas: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardResult {
    pub value: f64,
    pub method: RewardMethod,
}

/// Gaussian law of the state at time `t` in the reward's units.
fn law_at(sol: &ClaSolution, units: Units, t: f64) -> Result<(DVector<f64>, DMatrix<f64>), RewardError> {
    let (phi, v) = sol.moments_at(t)?;
    let n = sol.system_size;
    let s = units.scale(n);
    Ok((phi * s, v * (s * s / n)))
}

/// `E[ρ(Ŷ(T))]`: exact for polynomials of degree at most two, Gauss–Hermite
/// quadrature otherwise.
pub fn instantaneous(sol: &ClaSolution, rho: &RewardStructure, t: f64) -> Result<RewardResult, RewardError> {
    match rho.degree() {
        Some(d) if d <= 2 => {
            let (mu, cov) = law_at(sol, rho.units, t)?;
            Ok(RewardResult {
                value: analytic_expectation(rho, &mu, &cov, sol.system_size),
                method: RewardMethod::Analytic,
            })
        }
        _ => instantaneous_quadrature(sol, rho, t),
    }
}

/// `ρ(μ) + ½·tr(H·Σ)` for a quadratic `ρ` with constant Hessian `H`.
fn analytic_expectation(rho: &RewardStructure, mu: &DVector<f64>, cov: &DMatrix<f64>, n: f64) -> f64 {
    let x = mu.as_slice();
    let mut value = rho.expr.eval(x, n);
    let vars: Vec<usize> = rho.expr.variables().into_iter().collect();
    for &i in &vars {
        let di = rho.expr.diff(i);
        for &j in &vars {
            let hij = di.diff(j).eval(x, n);
            value += 0.5 * hij * cov[(i, j)];
        }
    }
    value.clamp(-rho.cap, rho.cap)
}

/// Gauss–Hermite evaluation of `E[ρ(Ŷ(T))]` over the species that `ρ`
/// depends on (at most two), truncated at `±8σ`.
pub fn instantaneous_quadrature(sol: &ClaSolution, rho: &RewardStructure, t: f64) -> Result<RewardResult, RewardError> {
    let (mu, cov) = law_at(sol, rho.units, t)?;
    let vars: Vec<usize> = rho.expr.variables().into_iter().collect();
    let n = sol.system_size;
    let method = RewardMethod::GaussHermite {
        order: QUADRATURE_ORDER,
        sigmas: QUADRATURE_SIGMAS,
    };
    if vars.len() > 2 {
        return Err(RewardError::TooManyVariables(vars.len()));
    }
    if vars.is_empty() {
        return Ok(RewardResult {
            value: rho.eval(mu.as_slice(), n),
            method,
        });
    }
    let d = vars.len();
    let sub = DMatrix::from_fn(d, d, |a, b| cov[(vars[a], vars[b])]);
    let eig = sub.symmetric_eigen();
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let (nodes, weights) = gauss_hermite(QUADRATURE_ORDER);
    let mut x = mu.as_slice().to_vec();
    let mut total = 0.0;
    let mut visit = |u: &[f64], w: f64| {
        for (a, &var) in vars.iter().enumerate() {
            x[var] = mu[var] + (0..d).map(|b| root[(a, b)] * u[b]).sum::<f64>();
        }
        total += w * rho.eval(&x, n);
    };
    for (i, &ui) in nodes.iter().enumerate() {
        if ui.abs() > QUADRATURE_SIGMAS {
            continue;
        }
        if d == 1 {
            visit(&[ui], weights[i]);
        } else {
            for (j, &uj) in nodes.iter().enumerate() {
                if uj.abs() <= QUADRATURE_SIGMAS {
                    visit(&[ui, uj], weights[i] * weights[j]);
                }
            }
        }
    }
    Ok(RewardResult { value: total, method })
}

/// `∫₀ᵀ E[ρ(Ŷ(s))] ds` by the composite trapezoid rule with step
/// `min(h, T/100)`.
pub fn cumulative(sol: &ClaSolution, rho: &RewardStructure, t: f64) -> Result<f64, RewardError> {
    if t < 0.0 {
        return Err(RewardError::Invalid(format!("negative horizon {t}")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let delta = sol.h.min(t / 100.0);
    let n = ((t / delta) - 1e-9).ceil() as usize;
    let mut prev = instantaneous(sol, rho, 0.0)?.value;
    let mut prev_t = 0.0;
    let mut total = 0.0;
    for i in 1..=n {
        let ti = if i == n { t } else { i as f64 * delta };
        let v = instantaneous(sol, rho, ti)?.value;
        total += 0.5 * (ti - prev_t) * (prev + v);
        prev = v;
        prev_t = ti;
    }
    Ok(total)
}

/// Mean and variance of species `i` in counts at time `t`, read off the
/// instantaneous rewards `x̂_i` and `x̂_i²`.
pub fn expectation_variance(sol: &ClaSolution, species: usize, t: f64) -> Result<(f64, f64), RewardError> {
    if species >= sol.num_species() {
        return Err(RewardError::Invalid(format!("species index {species} out of range")));
    }
    let size = RewardStructure::new(Expr::Var(species), Units::Concentration);
    let square = RewardStructure::new(Expr::pow(Expr::Var(species), 2), Units::Concentration);
    let m1 = instantaneous(sol, &size, t)?.value;
    let m2 = instantaneous(sol, &square, t)?.value;
    let n = sol.system_size;
    Ok(((n * m1).min(C_MAX), (n * n * (m2 - m1 * m1)).max(0.0).min(C_MAX)))
}

/// A reward re-expressed on projected coordinates `z = B·x̂` through
/// `x̂ = B⁺·z`.
#[derive(Debug, Clone)]
pub struct ProjectedReward {
    rho: RewardStructure,
    pinv: DMatrix<f64>,
    system_size: f64,
}

impl ProjectedReward {
    pub fn eval(&self, z: &[f64]) -> f64 {
        let xhat = &self.pinv * DVector::from_column_slice(z);
        self.rho.eval_concentration(xhat.as_slice(), self.system_size)
    }
}

fn rowspace_residual(rows: &[Vec<f64>], g: &DVector<f64>) -> f64 {
    if rows.is_empty() {
        return g.norm();
    }
    let n = g.len();
    let b = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    let gram = &b * b.transpose();
    match gram.try_inverse() {
        Some(inv) => (g - b.transpose() * (inv * (&b * g))).norm(),
        None => g.norm(),
    }
}

/// Makes `rho` a function of projected coordinates. Rows that `ρ` needs but
/// the predicate does not supply are appended (affine rewards only); the
/// returned rows are the final projection.
pub fn project_reward(
    rho: &RewardStructure,
    rows: &[Vec<f64>],
    num_species: usize,
    system_size: f64,
) -> Result<(Vec<Vec<f64>>, ProjectedReward), RewardError> {
    let mut rows = rows.to_vec();
    let gradient = |x: &[f64]| {
        DVector::from_iterator(num_species, (0..num_species).map(|j| rho.expr.diff(j).eval(x, system_size)))
    };
    match rho.degree() {
        Some(d) if d <= 1 => {
            let g = gradient(&vec![0.0; num_species]);
            let scale = g.norm();
            if scale > 0.0 && rowspace_residual(&rows, &g) > 1e-9 * scale {
                if rows.len() >= 2 {
                    return Err(RewardError::NotProjectable(
                        "its gradient adds a third projection axis".into(),
                    ));
                }
                rows.push(g.iter().copied().collect());
            }
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            for _ in 0..16 {
                let x: Vec<f64> = (0..num_species).map(|_| rng.gen_range(0.0..10.0)).collect();
                let g = gradient(&x);
                let scale = g.norm();
                if scale > 0.0 && rowspace_residual(&rows, &g) > 1e-7 * scale {
                    return Err(RewardError::NotProjectable(
                        "its gradient leaves the span of the predicate rows".into(),
                    ));
                }
            }
        }
    }
    if rows.is_empty() {
        rows.push((0..num_species).map(|j| if j == 0 { 1.0 } else { 0.0 }).collect());
    }
    let b = DMatrix::from_fn(rows.len(), num_species, |i, j| rows[i][j]);
    let pinv = b
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| RewardError::Invalid(e.to_string()))?;
    Ok((
        rows,
        ProjectedReward {
            rho: rho.clone(),
            pinv,
            system_size,
        },
    ))
}

/// Bounded reachability reward: `Σ_{n'<n} h·Σ_{z∉A} ρ(z)·P(Z(n') = z)` with
/// `A` absorbing from step 1 and `n = ⌊T/h⌋`, under the given time rule. The
/// returned result carries the whole series in `reward`.
pub fn reachability_reward(
    stats: &ProjectedStats,
    grid: &GridConfig,
    rho: &ProjectedReward,
    target: &TargetRegion,
    horizon: f64,
    rule: RewardRule,
) -> Result<PropagationResult, RewardError> {
    let n = crate::abstraction::floor_steps(horizon, stats.h);
    let f = |z: &[f64]| rho.eval(z);
    let plan = Plan {
        survive: TargetRegion::full(stats.dim()),
        success: target.clone(),
        window: (0, n),
        last_step: n,
        reward: Some(&f),
        reward_rule: rule,
        snapshot_step: None,
    };
    Ok(propagate(stats, &plan, grid)?)
}
