//! Gillespie direct-method simulation and Monte Carlo estimates of CSL and
//! reward measures.
//!
//! Run `i` of a batch with master seed `s` draws from
//! `ChaCha8Rng::seed_from_u64(s)` with its stream set to `i`, so estimates
//! are bitwise reproducible and independent of the worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::csl::{Cmp, Predicate};
use crate::model::{ModelError, SrnModel};
use crate::rewards::RewardStructure;

/// 97.5% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error)]
pub enum SsaError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub runs: usize,
    pub seed: u64,
}

/// Generator for run `run` of a batch seeded with `seed`.
pub fn run_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

/// Point estimate with a 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Estimate {
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub runs: usize,
}

impl Estimate {
    /// Wilson score interval for `successes` out of `runs`.
    pub fn wilson(successes: usize, runs: usize) -> Self {
        let n = runs as f64;
        let p = successes as f64 / n;
        let z2 = Z95 * Z95;
        let denom = 1.0 + z2 / n;
        let center = (p + z2 / (2.0 * n)) / denom;
        let half = Z95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
        Self {
            value: p,
            ci_lo: (center - half).clamp(0.0, p),
            ci_hi: (center + half).clamp(p, 1.0),
            runs,
        }
    }

    /// Sample mean ± 1.96 standard errors.
    pub fn mean(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let half = Z95 * (var / n).sqrt();
        Self {
            value: mean,
            ci_lo: mean - half,
            ci_hi: mean + half,
            runs: samples.len(),
        }
    }

    pub fn std_error(&self) -> f64 {
        (self.ci_hi - self.ci_lo) / (2.0 * Z95)
    }
}

/// Piecewise-constant path: `states[i]` holds on `[times[i], times[i+1])`,
/// the last state up to and including `horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub times: Vec<f64>,
    pub states: Vec<Vec<u64>>,
    pub horizon: f64,
}

/// Walks one trajectory on `[0, horizon]`, calling `visit(start, end, state,
/// last)` per segment until it returns `false`.
pub fn walk<R: Rng>(
    model: &SrnModel,
    horizon: f64,
    rng: &mut R,
    mut visit: impl FnMut(f64, f64, &[f64], bool) -> bool,
) -> Result<(), SsaError> {
    let changes: Vec<Vec<f64>> = model.reactions.iter().map(|r| r.state_change()).collect();
    let mut x: Vec<f64> = model.initial_state.iter().map(|&c| c as f64).collect();
    let mut props = vec![0.0; changes.len()];
    let mut t = 0.0;
    loop {
        let mut total = 0.0;
        for (j, a) in props.iter_mut().enumerate() {
            *a = model.propensity(j, &x)?;
            total += *a;
        }
        let dt = if total > 0.0 {
            -(1.0 - rng.gen::<f64>()).ln() / total
        } else {
            f64::INFINITY
        };
        let next = t + dt;
        if next >= horizon {
            visit(t, horizon, &x, true);
            return Ok(());
        }
        if !visit(t, next, &x, false) {
            return Ok(());
        }
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (j, a) in props.iter().enumerate() {
            if *a > 0.0 {
                chosen = Some(j);
                acc += a;
                if target < acc {
                    break;
                }
            }
        }
        let j = chosen.expect("positive total rate");
        for (xi, d) in x.iter_mut().zip(&changes[j]) {
            *xi += d;
        }
        t = next;
    }
}

/// Samples one trajectory with generator `run_rng(seed, 0)`.
pub fn simulate(model: &SrnModel, horizon: f64, seed: u64) -> Result<Path, SsaError> {
    simulate_with(model, horizon, &mut run_rng(seed, 0))
}

pub fn simulate_with<R: Rng>(model: &SrnModel, horizon: f64, rng: &mut R) -> Result<Path, SsaError> {
    let mut path = Path {
        times: Vec::new(),
        states: Vec::new(),
        horizon,
    };
    walk(model, horizon, rng, |s, _, x, _| {
        path.times.push(s);
        path.states.push(x.iter().map(|&v| v as u64).collect());
        true
    })?;
    Ok(path)
}

/// Evaluates a concentration predicate on a count vector. Thresholds are
/// compared in counts and snapped to integers within rounding error.
pub fn holds_counts(p: &Predicate, x: &[f64], system_size: f64) -> bool {
    p.satisfiable
        && p.atoms.iter().all(|a| {
            let lhs: f64 = a.row.iter().zip(x).map(|(c, v)| c * v).sum();
            let mut rhs = a.bound * system_size;
            let r = rhs.round();
            if (rhs - r).abs() <= 1e-9 * r.abs().max(1.0) {
                rhs = r;
            }
            match a.cmp {
                Cmp::Lt => lhs < rhs,
                Cmp::Le => lhs <= rhs,
                Cmp::Gt => lhs > rhs,
                Cmp::Ge => lhs >= rhs,
            }
        })
}

/// Earliest `t ≥ t1` in the segment `[s, e)` (closed at the horizon).
fn entry_time(s: f64, e: f64, t1: f64, last: bool) -> Option<f64> {
    let t = s.max(t1);
    (t < e || (last && t <= e)).then_some(t)
}

/// First time in `[t1, horizon]` at which `safe U goal` is witnessed, or
/// infinity.
pub fn until_time<R: Rng>(
    model: &SrnModel,
    safe: &Predicate,
    goal: &Predicate,
    t1: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<f64, SsaError> {
    let n = model.system_size;
    let mut hit = f64::INFINITY;
    walk(model, horizon, rng, |s, e, x, last| {
        let is_safe = holds_counts(safe, x, n);
        if let Some(t) = entry_time(s, e, t1, last) {
            if holds_counts(goal, x, n) && (t == s || is_safe) {
                hit = t;
                return false;
            }
        }
        is_safe
    })?;
    Ok(hit)
}

fn check_times(times: &[f64]) -> Result<f64, SsaError> {
    let t_max = times.iter().copied().fold(0.0, f64::max);
    if times.is_empty() || times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(SsaError::Invalid("sampling times must be finite and non-negative".into()));
    }
    Ok(t_max)
}

fn per_run<T: Send>(cfg: &SimConfig, f: impl Fn(&mut ChaCha8Rng) -> Result<T, SsaError> + Sync) -> Result<Vec<T>, SsaError> {
    if cfg.runs == 0 {
        return Err(SsaError::Invalid("at least one run is required".into()));
    }
    (0..cfg.runs as u64)
        .into_par_iter()
        .map(|i| f(&mut run_rng(cfg.seed, i)))
        .collect()
}

/// `P(safe U[t1,T] goal)` for each `T` in `times`.
pub fn estimate_until(
    model: &SrnModel,
    safe: &Predicate,
    goal: &Predicate,
    t1: f64,
    times: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<Estimate>, SsaError> {
    let t_max = check_times(times)?;
    let hits = per_run(cfg, |rng| until_time(model, safe, goal, t1, t_max, rng))?;
    Ok(times
        .iter()
        .map(|&t| Estimate::wilson(hits.iter().filter(|&&h| h <= t).count(), cfg.runs))
        .collect())
}

/// `P(F[t1,T] target)` for each `T` in `times`.
pub fn estimate_reach(
    model: &SrnModel,
    target: &Predicate,
    t1: f64,
    times: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<Estimate>, SsaError> {
    estimate_until(model, &Predicate::tt(), target, t1, times, cfg)
}

#[derive(Debug, Clone, Copy)]
pub enum RewardVariant<'a> {
    /// `ρ(X(T))`.
    Instant,
    /// `∫_0^T ρ(X(t)) dt`.
    Cumulative,
    /// Cumulative reward stopped at the first entry into the target.
    Reach(&'a Predicate),
}

/// Reward estimates for each `T` in `times`.
pub fn estimate_rewards(
    model: &SrnModel,
    rho: &RewardStructure,
    variant: RewardVariant<'_>,
    times: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<Estimate>, SsaError> {
    let t_max = check_times(times)?;
    let n = model.system_size;
    let samples = per_run(cfg, |rng| {
        let mut out = vec![0.0; times.len()];
        let mut acc = 0.0;
        walk(model, t_max, rng, |s, e, x, last| {
            if let RewardVariant::Reach(target) = variant {
                if holds_counts(target, x, n) {
                    for (o, &t) in out.iter_mut().zip(times) {
                        if t >= s {
                            *o = acc;
                        }
                    }
                    return false;
                }
            }
            let r = rho.eval(x, n);
            for (o, &t) in out.iter_mut().zip(times) {
                let inside = s <= t && (t < e || last);
                match variant {
                    RewardVariant::Instant if inside => *o = r,
                    RewardVariant::Cumulative | RewardVariant::Reach(_) if t >= s => *o = acc + r * (t.min(e) - s),
                    _ => {}
                }
            }
            acc += r * (e - s);
            true
        })?;
        Ok(out)
    })?;
    Ok((0..times.len())
        .map(|j| Estimate::mean(&samples.iter().map(|s| s[j]).collect::<Vec<_>>()))
        .collect())
}
