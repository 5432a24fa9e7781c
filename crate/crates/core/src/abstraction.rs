//! Space discretization of the projected Gaussian process and propagation of
//! probability mass over the resulting time-inhomogeneous DTMC.
//!
//! Cells have width `2Δz` and centers on the lattice `2Δz·ℤ^m`, so cell `i`
//! covers `[(2i−1)Δz, (2i+1)Δz)`. Each step has a success region `S` and a
//! survive region `K`, both boxes in projected coordinates. From a source
//! cell, mass lands in `S` (absorbed as success), outside `K ∪ S` (absorbed
//! as failure), or in `cell ∩ K ∖ S` for the cells of the next support.
//! Reachability is the special case `K = ℝ^m`.

use nalgebra::DVector;
use rayon::prelude::*;
use thiserror::Error;

use crate::cla::{kernel_step, ClaError, GaussianKernelStep, ProjectedStats};
use crate::gauss::{bvn_cdf, gaussian_cdf, interval_prob, Interval};

pub const DEFAULT_TH: f64 = 1e-14;
pub const DEFAULT_SUPPORT_CAP: usize = 10_000_000;

/// Half-width of the kernel row in residual standard deviations.
const ROW_SIGMAS: f64 = 8.0;

/// Source cells processed per parallel batch.
const BATCH: usize = 2048;

/// Largest dense accumulation buffer before falling back to a hash map.
const DENSE_LIMIT: usize = 1 << 24;

#[derive(Debug, Error)]
pub enum AbstractionError {
    #[error(transparent)]
    Cla(#[from] ClaError),
    #[error("support grew to {size} cells, above the cap of {cap}; increase Δz")]
    SupportCap { size: usize, cap: usize },
    #[error("a kernel row would span {cells} cells, above the cap of {cap}; increase Δz")]
    RowCap { cells: usize, cap: usize },
    #[error("invalid abstraction request: {0}")]
    Invalid(String),
}

/// Lattice coordinates of a cell; the second entry is 0 in one dimension.
pub type Coord = [i64; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    /// Half cell width `Δz` in normalized units.
    pub dz: f64,
    /// Mass threshold `Th` below which row entries and support cells are
    /// dropped.
    pub th: f64,
    pub support_cap: usize,
}

impl GridConfig {
    pub fn new(dz: f64) -> Self {
        Self {
            dz,
            th: DEFAULT_TH,
            support_cap: DEFAULT_SUPPORT_CAP,
        }
    }

    pub fn center(&self, i: i64) -> f64 {
        2.0 * self.dz * i as f64
    }

    pub fn cell_of(&self, z: f64) -> i64 {
        (z / (2.0 * self.dz)).round() as i64
    }

    pub fn cell_bounds(&self, i: i64) -> (f64, f64) {
        ((2 * i - 1) as f64 * self.dz, (2 * i + 1) as f64 * self.dz)
    }
}

/// A box in projected coordinates: one interval per axis, conjunction
/// semantics. An empty interval on any axis makes the region empty.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetRegion {
    pub bounds: Vec<Interval>,
}

impl TargetRegion {
    pub fn full(m: usize) -> Self {
        Self {
            bounds: vec![Interval::FULL; m],
        }
    }

    pub fn empty(m: usize) -> Self {
        Self {
            bounds: vec![Interval::new(f64::INFINITY, f64::NEG_INFINITY); m],
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.iter().any(|b| b.is_empty())
    }

    pub fn is_full(&self) -> bool {
        self.bounds.iter().all(|b| *b == Interval::FULL)
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        !self.is_empty() && self.bounds.iter().zip(z).all(|(b, &x)| b.lo <= x && x <= b.hi)
    }

    fn axis(&self, i: usize) -> Interval {
        if self.is_empty() {
            Interval::new(f64::INFINITY, f64::NEG_INFINITY)
        } else {
            self.bounds[i]
        }
    }
}

/// Absorbing structure of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub success: Option<TargetRegion>,
    pub survive: TargetRegion,
}

/// Result of one kernel row: where the mass of a unit source lands.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRow {
    pub cells: Vec<(Coord, f64)>,
    pub success: f64,
    pub fail: f64,
    /// Mass of dropped entries below `Th`.
    pub truncated: f64,
}

/// Conditional Gaussian law of the next projected state.
#[derive(Debug, Clone, Copy)]
struct LocalLaw {
    m: usize,
    mean: [f64; 2],
    sd: [f64; 2],
    rho: f64,
}

impl LocalLaw {
    fn new(kernel: &GaussianKernelStep, z: &DVector<f64>) -> Self {
        let m = z.len();
        let mu = kernel.conditional_mean(z);
        let r = &kernel.residual;
        let mut mean = [0.0; 2];
        let mut sd = [0.0; 2];
        for i in 0..m {
            mean[i] = mu[i];
            sd[i] = r[(i, i)].max(0.0).sqrt();
        }
        let rho = if m == 2 && sd[0] > 0.0 && sd[1] > 0.0 {
            (r[(0, 1)] / (sd[0] * sd[1])).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        Self { m, mean, sd, rho }
    }

    fn cdf1(&self, axis: usize, x: f64) -> f64 {
        if self.sd[axis] == 0.0 {
            if self.mean[axis] < x {
                1.0
            } else {
                0.0
            }
        } else {
            gaussian_cdf((x - self.mean[axis]) / self.sd[axis])
        }
    }

    /// `P(X < x, Y < y)`.
    fn cdf2(&self, x: f64, y: f64) -> f64 {
        match (self.sd[0] == 0.0, self.sd[1] == 0.0) {
            (false, false) => bvn_cdf((x - self.mean[0]) / self.sd[0], (y - self.mean[1]) / self.sd[1], self.rho),
            _ => self.cdf1(0, x) * self.cdf1(1, y),
        }
    }

    fn box_prob(&self, b: &[Interval; 2]) -> f64 {
        if b[0].is_empty() || (self.m == 2 && b[1].is_empty()) {
            return 0.0;
        }
        if self.m == 1 {
            return interval_prob(self.mean[0], self.sd[0], b[0].lo, b[0].hi);
        }
        let (x0, x1, y0, y1) = (b[0].lo, b[0].hi, b[1].lo, b[1].hi);
        let p = self.cdf2(x1, y1) - self.cdf2(x0, y1) - self.cdf2(x1, y0) + self.cdf2(x0, y0);
        p.max(0.0)
    }

    /// Cell index range covering `mean ± 8σ` on one axis.
    fn cell_range(&self, axis: usize, grid: &GridConfig) -> (i64, i64) {
        let w = ROW_SIGMAS * self.sd[axis];
        (
            grid.cell_of(self.mean[axis] - w),
            grid.cell_of(self.mean[axis] + w),
        )
    }
}

fn intersect(a: Interval, b: Interval) -> Interval {
    Interval::new(a.lo.max(b.lo), a.hi.min(b.hi))
}

fn region_box(r: &TargetRegion, m: usize) -> [Interval; 2] {
    let mut out = [Interval::FULL; 2];
    for (i, slot) in out.iter_mut().enumerate().take(m) {
        *slot = r.axis(i);
    }
    out
}

fn box_intersect(a: &[Interval; 2], b: &[Interval; 2]) -> [Interval; 2] {
    [intersect(a[0], b[0]), intersect(a[1], b[1])]
}

/// Distributes the unit mass of source cell `source` over the next step.
pub fn kernel_row(
    kernel: &GaussianKernelStep,
    grid: &GridConfig,
    phase: &Phase,
    source: Coord,
) -> Result<KernelRow, AbstractionError> {
    let m = kernel.intercept.len();
    let z = DVector::from_iterator(m, (0..m).map(|i| grid.center(source[i])));
    let law = LocalLaw::new(kernel, &z);
    row_from_law(&law, grid, phase)
}

fn row_from_law(law: &LocalLaw, grid: &GridConfig, phase: &Phase) -> Result<KernelRow, AbstractionError> {
    let m = law.m;
    let k_box = region_box(&phase.survive, m);
    let s_box = phase.success.as_ref().map(|s| region_box(s, m));
    let success = s_box.map_or(0.0, |s| law.box_prob(&s));
    let p_k = law.box_prob(&k_box);
    let p_ks = s_box.map_or(0.0, |s| law.box_prob(&box_intersect(&k_box, &s)));
    let stay = (p_k - p_ks).max(0.0);
    let fail = (1.0 - success - stay).max(0.0);

    let (lo0, hi0) = law.cell_range(0, grid);
    let (lo1, hi1) = if m == 2 { law.cell_range(1, grid) } else { (0, 0) };
    let span = ((hi0 - lo0 + 1) as u128) * ((hi1 - lo1 + 1) as u128);
    if span > grid.support_cap as u128 {
        return Err(AbstractionError::RowCap {
            cells: span.min(usize::MAX as u128) as usize,
            cap: grid.support_cap,
        });
    }
    let mut cells = Vec::new();
    let mut kept = 0.0;
    if stay > 0.0 {
        if m == 1 {
            for i in lo0..=hi0 {
                let (a, b) = grid.cell_bounds(i);
                let cell = [Interval::new(a, b), Interval::FULL];
                let ck = box_intersect(&cell, &k_box);
                let mut p = law.box_prob(&ck);
                if let Some(s) = &s_box {
                    p -= law.box_prob(&box_intersect(&ck, s));
                }
                if p >= grid.th {
                    kept += p;
                    cells.push(([i, 0], p));
                }
            }
        } else {
            let cache = CornerCache::new(law, grid, (lo0, hi0), (lo1, hi1), &k_box, s_box.as_ref());
            for i in lo0..=hi0 {
                let (a, b) = grid.cell_bounds(i);
                for j in lo1..=hi1 {
                    let (c, d) = grid.cell_bounds(j);
                    let cell = [Interval::new(a, b), Interval::new(c, d)];
                    let ck = box_intersect(&cell, &k_box);
                    let mut p = cache.box_prob(&ck);
                    if let Some(s) = &s_box {
                        p -= cache.box_prob(&box_intersect(&ck, s));
                    }
                    if p >= grid.th {
                        kept += p;
                        cells.push(([i, j], p));
                    }
                }
            }
        }
    }
    Ok(KernelRow {
        cells,
        success,
        fail,
        truncated: (stay - kept).max(0.0),
    })
}

/// Bivariate CDF values at every pair of breakpoints (cell boundaries plus
/// region bounds) of a kernel row, so each box costs four lookups.
struct CornerCache {
    xs: Vec<f64>,
    ys: Vec<f64>,
    values: Vec<f64>,
}

impl CornerCache {
    fn new(
        law: &LocalLaw,
        grid: &GridConfig,
        r0: (i64, i64),
        r1: (i64, i64),
        k: &[Interval; 2],
        s: Option<&[Interval; 2]>,
    ) -> Self {
        let axis = |axis: usize, (lo, hi): (i64, i64)| {
            let mut v: Vec<f64> = (lo..=hi + 1).map(|i| grid.cell_bounds(i).0).collect();
            let (min, max) = (v[0], v[v.len() - 1]);
            let mut extra = vec![k[axis].lo, k[axis].hi];
            if let Some(s) = s {
                extra.extend([s[axis].lo, s[axis].hi]);
            }
            v.extend(extra.into_iter().filter(|x| *x > min && *x < max));
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let xs = axis(0, r0);
        let ys = axis(1, r1);
        let mut values = Vec::with_capacity(xs.len() * ys.len());
        for &x in &xs {
            for &y in &ys {
                values.push(law.cdf2(x, y));
            }
        }
        Self { xs, ys, values }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ys.len() + j]
    }

    fn box_prob(&self, b: &[Interval; 2]) -> f64 {
        if b[0].is_empty() || b[1].is_empty() {
            return 0.0;
        }
        let find = |v: &[f64], x: f64| v.binary_search_by(|p| p.total_cmp(&x)).expect("breakpoint cached");
        let (i0, i1) = (find(&self.xs, b[0].lo), find(&self.xs, b[0].hi));
        let (j0, j1) = (find(&self.ys, b[1].lo), find(&self.ys, b[1].hi));
        (self.at(i1, j1) - self.at(i0, j1) - self.at(i1, j0) + self.at(i0, j0)).max(0.0)
    }
}

/// Time series produced by mass propagation, indexed by step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    /// Mass absorbed in the success state by step `k` (cumulative).
    pub success: Vec<f64>,
    /// Mass absorbed in the failure state by step `k` (cumulative).
    pub fail: Vec<f64>,
    /// Mass dropped by the `Th` threshold by step `k` (cumulative).
    pub truncated: Vec<f64>,
    /// Mass on grid cells at step `k`.
    pub support_mass: Vec<f64>,
    /// Accumulated reward over non-absorbed cells per [`RewardRule`], when a
    /// reward is attached; `reward[0] = 0`.
    pub reward: Option<Vec<f64>>,
    /// Largest support size seen.
    pub max_support: usize,
    /// Support at the last step, sorted by lattice coordinates.
    pub final_support: Vec<(Coord, f64)>,
    /// Support at a requested step, if one was requested and reached.
    pub snapshot: Option<(usize, Vec<(Coord, f64)>)>,
    pub h: f64,
    pub dz: f64,
}

impl PropagationResult {
    /// Success mass at the final step.
    pub fn value(&self) -> f64 {
        *self.success.last().expect("at least step 0")
    }

    pub fn steps(&self) -> usize {
        self.success.len() - 1
    }
}

/// Time quadrature for the accumulated reward. `LeftEndpoint` adds
/// `h·E[ρ̄]` of the distribution before each step; `Trapezoid` averages the
/// distributions before and after.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardRule {
    LeftEndpoint,
    #[default]
    Trapezoid,
}

/// Step schedule for a propagation run.
pub struct Plan<'a> {
    /// Region whose complement is absorbed as failure from step 1 on.
    pub survive: TargetRegion,
    pub success: TargetRegion,
    /// First and last step at which `success` absorbs.
    pub window: (usize, usize),
    /// Last step to propagate to.
    pub last_step: usize,
    /// State reward on projected coordinates (normalized units).
    pub reward: Option<&'a (dyn Fn(&[f64]) -> f64 + Sync)>,
    pub reward_rule: RewardRule,
    pub snapshot_step: Option<usize>,
}

/// `⌊t/h⌋` robust to representation error in `t/h`.
pub fn floor_steps(t: f64, h: f64) -> usize {
    ((t / h) + 1e-9).floor().max(0.0) as usize
}

fn check_times(t1: f64, t2: f64) -> Result<(), AbstractionError> {
    if !(0.0 <= t1 && t1 <= t2 && t2.is_finite()) {
        return Err(AbstractionError::Invalid(format!("time bounds [{t1}, {t2}] must satisfy 0 ≤ t1 ≤ t2 < ∞")));
    }
    Ok(())
}

/// Bounded reachability of `target` within `[t1, t2]`: the target absorbs on
/// steps `⌊t1/h⌋ ..= ⌊t2/h⌋`, as for until with a `true` guard.
pub fn propagate_reach(
    stats: &ProjectedStats,
    target: &TargetRegion,
    t1: f64,
    t2: f64,
    grid: &GridConfig,
) -> Result<PropagationResult, AbstractionError> {
    check_times(t1, t2)?;
    let k2 = floor_steps(t2, stats.h);
    let plan = Plan {
        survive: TargetRegion::full(stats.dim()),
        success: target.clone(),
        window: (floor_steps(t1, stats.h), k2),
        last_step: k2,
        reward: None,
        reward_rule: RewardRule::default(),
        snapshot_step: None,
    };
    propagate(stats, &plan, grid)
}

/// Bounded until `safe U[t1,t2] goal`: leaving `safe` absorbs as failure from
/// step 1 on, and `goal` absorbs on steps `⌊t1/h⌋ ..= ⌊t2/h⌋`.
pub fn propagate_until(
    stats: &ProjectedStats,
    safe: &TargetRegion,
    goal: &TargetRegion,
    t1: f64,
    t2: f64,
    grid: &GridConfig,
) -> Result<PropagationResult, AbstractionError> {
    check_times(t1, t2)?;
    let k2 = floor_steps(t2, stats.h);
    let plan = Plan {
        survive: safe.clone(),
        success: goal.clone(),
        window: (floor_steps(t1, stats.h), k2),
        last_step: k2,
        reward: None,
        reward_rule: RewardRule::default(),
        snapshot_step: None,
    };
    propagate(stats, &plan, grid)
}

/// Runs mass propagation according to `plan`.
pub fn propagate(stats: &ProjectedStats, plan: &Plan<'_>, grid: &GridConfig) -> Result<PropagationResult, AbstractionError> {
    let m = stats.dim();
    if plan.survive.dim() != m || plan.success.dim() != m {
        return Err(AbstractionError::Invalid(format!(
            "regions must have {m} axes to match the projection"
        )));
    }
    if !(grid.dz > 0.0) || !(grid.th >= 0.0) {
        return Err(AbstractionError::Invalid("Δz must be positive and Th non-negative".into()));
    }
    if plan.last_step > stats.steps() {
        return Err(AbstractionError::Invalid(format!(
            "propagation needs {} steps but the CLA covers {}",
            plan.last_step,
            stats.steps()
        )));
    }
    let (k1, k2) = plan.window;
    let z0: Vec<f64> = stats.mean[0].iter().copied().collect();
    let mut result = PropagationResult {
        success: vec![0.0],
        fail: vec![0.0],
        truncated: vec![0.0],
        support_mass: vec![0.0],
        reward: plan.reward.map(|_| vec![0.0]),
        max_support: 0,
        final_support: Vec::new(),
        snapshot: None,
        h: stats.h,
        dz: grid.dz,
    };
    let push = |r: &mut PropagationResult, s: f64, f: f64, t: f64, mass: f64| {
        r.success.push(s);
        r.fail.push(f);
        r.truncated.push(t);
        r.support_mass.push(mass);
    };

    let mut support: Vec<(Coord, f64)> = Vec::new();
    if k1 == 0 && plan.success.contains(&z0) {
        result.success[0] = 1.0;
    } else if !plan.survive.contains(&z0) {
        result.fail[0] = 1.0;
    } else {
        let mut c = [0i64; 2];
        for (i, z) in z0.iter().enumerate() {
            c[i] = grid.cell_of(*z);
        }
        support.push((c, 1.0));
        result.support_mass[0] = 1.0;
        result.max_support = 1;
    }
    if plan.snapshot_step == Some(0) {
        result.snapshot = Some((0, support.clone()));
    }

    let expected_reward = |support: &[(Coord, f64)]| -> f64 {
        plan.reward.map_or(0.0, |rho| {
            support
                .iter()
                .map(|(c, p)| {
                    let z: Vec<f64> = (0..m).map(|i| grid.center(c[i])).collect();
                    rho(&z) * p
                })
                .sum()
        })
    };
    let mut reward_prev = expected_reward(&support);

    for k in 1..=plan.last_step {
        let (prev_s, prev_f, prev_t) = (result.success[k - 1], result.fail[k - 1], result.truncated[k - 1]);
        if support.is_empty() {
            push(&mut result, prev_s, prev_f, prev_t, 0.0);
        } else {
            let phase = Phase {
                success: (k >= k1 && k <= k2).then(|| plan.success.clone()),
                survive: plan.survive.clone(),
            };
            let kernel = kernel_step(stats, k - 1)?;
            let (next, s, f, t) = step(&kernel, grid, &phase, &support)?;
            let mass: f64 = next.iter().map(|c| c.1).sum();
            push(&mut result, prev_s + s, prev_f + f, prev_t + t, mass);
            if next.len() > grid.support_cap {
                return Err(AbstractionError::SupportCap {
                    size: next.len(),
                    cap: grid.support_cap,
                });
            }
            result.max_support = result.max_support.max(next.len());
            support = next;
        }
        if let Some(series) = result.reward.as_mut() {
            let reward_next = expected_reward(&support);
            let rate = match plan.reward_rule {
                RewardRule::LeftEndpoint => reward_prev,
                RewardRule::Trapezoid => 0.5 * (reward_prev + reward_next),
            };
            let last = *series.last().expect("reward series starts at 0");
            series.push(last + stats.h * rate);
            reward_prev = reward_next;
        }
        if plan.snapshot_step == Some(k) {
            result.snapshot = Some((k, support.clone()));
        }
    }
    result.final_support = support;
    Ok(result)
}

type StepOutput = (Vec<(Coord, f64)>, f64, f64, f64);

/// One propagation step from a sorted support. Rows are computed in
/// parallel; accumulation follows the lattice order of the sources so the
/// result does not depend on the thread count.
fn step(
    kernel: &GaussianKernelStep,
    grid: &GridConfig,
    phase: &Phase,
    support: &[(Coord, f64)],
) -> Result<StepOutput, AbstractionError> {
    let m = kernel.intercept.len();
    let mut acc = Accumulator::default();
    let (mut success, mut fail, mut truncated) = (0.0, 0.0, 0.0);
    for batch in support.chunks(BATCH) {
        let rows: Vec<Result<KernelRow, AbstractionError>> =
            batch.par_iter().map(|(c, _)| kernel_row(kernel, grid, phase, *c)).collect();
        let rows: Vec<KernelRow> = rows.into_iter().collect::<Result<_, _>>()?;
        if acc.is_unset() {
            acc = Accumulator::for_rows(&rows, m, support, kernel, grid);
        }
        for ((_, p), row) in batch.iter().zip(&rows) {
            success += p * row.success;
            fail += p * row.fail;
            truncated += p * row.truncated;
            for (c, q) in &row.cells {
                acc.add(*c, p * q);
            }
        }
    }
    let (cells, dropped) = acc.finish(grid.th);
    Ok((cells, success, fail, truncated + dropped))
}

/// Sums incoming mass per cell, densely over a bounding box when it is small
/// enough and in a hash map otherwise.
#[derive(Default)]
enum Accumulator {
    #[default]
    Unset,
    Dense {
        origin: Coord,
        width: [usize; 2],
        data: Vec<f64>,
        overflow: std::collections::HashMap<Coord, f64>,
    },
    Sparse(std::collections::HashMap<Coord, f64>),
}

impl Accumulator {
    fn is_unset(&self) -> bool {
        matches!(self, Accumulator::Unset)
    }

    /// Sizes the dense box from the extent of the whole support mapped
    /// through the conditional mean, padded by the first batch's row widths.
    fn for_rows(
        rows: &[KernelRow],
        m: usize,
        support: &[(Coord, f64)],
        kernel: &GaussianKernelStep,
        grid: &GridConfig,
    ) -> Self {
        let mut pad = [0i64; 2];
        for row in rows.iter().filter(|r| !r.cells.is_empty()) {
            let (lo, hi) = row.cells.iter().fold(([i64::MAX; 2], [i64::MIN; 2]), |(lo, hi), (c, _)| {
                ([lo[0].min(c[0]), lo[1].min(c[1])], [hi[0].max(c[0]), hi[1].max(c[1])])
            });
            for i in 0..2 {
                pad[i] = pad[i].max(hi[i] - lo[i] + 1);
            }
        }
        let mut lo = [i64::MAX; 2];
        let mut hi = [i64::MIN; 2];
        for (c, _) in support {
            let z = DVector::from_iterator(m, (0..m).map(|i| grid.center(c[i])));
            let mu = kernel.conditional_mean(&z);
            for i in 0..m {
                let cell = grid.cell_of(mu[i]);
                lo[i] = lo[i].min(cell);
                hi[i] = hi[i].max(cell);
            }
        }
        if m == 1 {
            lo[1] = 0;
            hi[1] = 0;
            pad[1] = 0;
        }
        let origin = [lo[0] - pad[0] - 1, lo[1] - pad[1] - 1];
        let width = [
            (hi[0] - lo[0] + 2 * pad[0] + 3).max(1) as usize,
            (hi[1] - lo[1] + 2 * pad[1] + 3).max(1) as usize,
        ];
        match width[0].checked_mul(width[1]) {
            Some(n) if n <= DENSE_LIMIT => Accumulator::Dense {
                origin,
                width,
                data: vec![0.0; n],
                overflow: Default::default(),
            },
            _ => Accumulator::Sparse(Default::default()),
        }
    }

    fn add(&mut self, c: Coord, p: f64) {
        match self {
            Accumulator::Unset => unreachable!("accumulator sized before use"),
            Accumulator::Dense {
                origin,
                width,
                data,
                overflow,
            } => {
                let (i, j) = (c[0] - origin[0], c[1] - origin[1]);
                if i >= 0 && j >= 0 && (i as usize) < width[0] && (j as usize) < width[1] {
                    data[i as usize * width[1] + j as usize] += p;
                } else {
                    *overflow.entry(c).or_insert(0.0) += p;
                }
            }
            Accumulator::Sparse(map) => *map.entry(c).or_insert(0.0) += p,
        }
    }

    /// Sorted support with cells at or below `th` removed, and the dropped
    /// mass.
    fn finish(self, th: f64) -> (Vec<(Coord, f64)>, f64) {
        let mut cells: Vec<(Coord, f64)> = match self {
            Accumulator::Unset => Vec::new(),
            Accumulator::Dense {
                origin,
                width,
                data,
                overflow,
            } => {
                let mut v: Vec<(Coord, f64)> = data
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p != 0.0)
                    .map(|(idx, p)| {
                        let i = (idx / width[1]) as i64 + origin[0];
                        let j = (idx % width[1]) as i64 + origin[1];
                        ([i, j], *p)
                    })
                    .collect();
                v.extend(overflow);
                v
            }
            Accumulator::Sparse(map) => map.into_iter().collect(),
        };
        cells.sort_by(|a, b| a.0.cmp(&b.0));
        let mut dropped = 0.0;
        cells.retain(|(_, p)| {
            if *p <= th {
                dropped += p;
                false
            } else {
                true
            }
        });
        (cells, dropped)
    }
}
