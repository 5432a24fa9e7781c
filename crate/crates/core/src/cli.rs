//! Command-line front end: `check`, `simulate`, `compare` and `rerun`.
//!
//! Every result file embeds a [`RunManifest`]: JSON results carry it under
//! `"manifest"`, CSV files on a leading `# manifest: {...}` line.
//! `CLAMC_THREADS` caps the worker pool.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{GridConfig, RewardRule, DEFAULT_SUPPORT_CAP, DEFAULT_TH};
use crate::cla::{solve_cla, ClaError};
use crate::csl::{self, normalize, CheckConfig, CslError, CslFormula, Property, QueryResult};
use crate::model::{parse_model, ModelError, SrnModel, Units};
use crate::ode::{Method, Tolerances};
use crate::rewards::RewardStructure;
use crate::ssa::{self, Estimate, RewardVariant, SimConfig, SsaError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Model {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
    #[error("property {index}: {source}")]
    Property {
        index: usize,
        #[source]
        source: CslError,
    },
    #[error(transparent)]
    Csl(#[from] CslError),
    #[error(transparent)]
    Cla(#[from] ClaError),
    #[error(transparent)]
    Ssa(#[from] SsaError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Parser)]
#[command(name = "clamc", version, about = "Central-limit model checker for stochastic reaction networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check CSL properties on the CLA abstraction.
    Check(CheckArgs),
    /// Sample SSA trajectories.
    Simulate(SimulateArgs),
    /// Compare a CLA curve against SSA estimates.
    Compare(CompareArgs),
    /// Re-run the command recorded in a result file's manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitsArg {
    #[default]
    Concentration,
    Counts,
}

impl From<UnitsArg> for Units {
    fn from(u: UnitsArg) -> Self {
        match u {
            UnitsArg::Concentration => Units::Concentration,
            UnitsArg::Counts => Units::Counts,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Reaction network file.
    #[arg(long)]
    pub model: PathBuf,
    /// Override the system size `N`; initial counts are rescaled.
    #[arg(long = "N")]
    pub system_size: Option<f64>,
    /// Unit of thresholds in properties and of reward values.
    #[arg(long, value_enum, default_value_t)]
    pub units: UnitsArg,
}

impl ModelArgs {
    pub fn load(&self) -> Result<SrnModel, CliError> {
        let text = read(&self.model)?;
        let m = parse_model(&text).map_err(|source| CliError::Model {
            path: self.model.clone(),
            source,
        })?;
        Ok(match self.system_size {
            Some(n) if n > 0.0 && n.is_finite() => m.rescaled(n),
            Some(n) => return Err(CliError::Usage(format!("--N must be positive, got {n}"))),
            None => m,
        })
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PropertyArgs {
    /// File with one property per line.
    #[arg(long, conflicts_with = "formula")]
    pub prop: Option<PathBuf>,
    /// Inline property.
    #[arg(long, required_unless_present = "prop")]
    pub formula: Option<String>,
}

impl PropertyArgs {
    pub fn load(&self, model: &SrnModel, units: Units) -> Result<Vec<Property>, CliError> {
        let text = match (&self.prop, &self.formula) {
            (Some(p), _) => read(p)?,
            (None, Some(f)) => f.clone(),
            (None, None) => return Err(CliError::Usage("one of --prop or --formula is required".into())),
        };
        let props: Vec<Property> = text
            .lines()
            .map(str::trim)
            .filter(|l| !(l.is_empty() || l.starts_with('#') || l.starts_with("//")))
            .enumerate()
            .map(|(i, l)| {
                csl::parse_property(l, model, units).map_err(|source| CliError::Property { index: i + 1, source })
            })
            .collect::<Result<_, _>>()?;
        if props.is_empty() {
            return Err(CliError::Usage("no properties given".into()));
        }
        Ok(props)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct NumericArgs {
    /// Discretization time step.
    #[arg(long)]
    pub h: f64,
    /// Half cell width in concentrations.
    #[arg(long)]
    pub dz: f64,
    /// Mass threshold below which cells are dropped.
    #[arg(long, default_value_t = DEFAULT_TH)]
    pub th: f64,
    #[arg(long, default_value_t = DEFAULT_SUPPORT_CAP)]
    pub support_cap: usize,
    #[arg(long, default_value_t = Tolerances::default().rtol)]
    pub rtol: f64,
    #[arg(long, default_value_t = Tolerances::default().atol)]
    pub atol: f64,
    /// Use predicate bounds literally instead of placing them halfway
    /// between integer counts.
    #[arg(long)]
    #[serde(default)]
    pub no_lattice_correction: bool,
    /// Time quadrature for reachability rewards.
    #[arg(long, value_enum, default_value_t = RewardRuleArg::Trapezoid)]
    #[serde(default)]
    pub reward_rule: RewardRuleArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardRuleArg {
    Left,
    #[default]
    Trapezoid,
}

impl From<RewardRuleArg> for RewardRule {
    fn from(r: RewardRuleArg) -> Self {
        match r {
            RewardRuleArg::Left => RewardRule::LeftEndpoint,
            RewardRuleArg::Trapezoid => RewardRule::Trapezoid,
        }
    }
}

impl NumericArgs {
    pub fn config(&self) -> Result<CheckConfig, CliError> {
        if !(self.h > 0.0 && self.dz > 0.0 && self.th >= 0.0 && self.rtol > 0.0 && self.atol > 0.0) {
            return Err(CliError::Usage("--h, --dz, --rtol and --atol must be positive, --th non-negative".into()));
        }
        Ok(CheckConfig {
            h: self.h,
            dz: self.dz,
            th: self.th,
            support_cap: self.support_cap,
            method: Method::Adaptive(Tolerances {
                rtol: self.rtol,
                atol: self.atol,
            }),
            lattice_correction: !self.no_lattice_correction,
            reward_rule: self.reward_rule.into(),
        })
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CheckArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub property: PropertyArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub numeric: NumericArgs,
    /// Sweep the upper time bound: `T:start:stop:step`.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Sweep CSV path (default: `<out>` with extension `sweep.csv`).
    #[arg(long)]
    pub sweep_out: Option<PathBuf>,
    /// Write the CLA mean and covariance per step.
    #[arg(long)]
    pub dump_cla: Option<PathBuf>,
    /// Write the support distribution at step `K` of the first property.
    #[arg(long, num_args = 2, value_names = ["K", "PATH"])]
    pub dump_dist: Option<Vec<String>>,
    /// Result JSON (stdout if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub horizon: f64,
    /// Trajectory CSV (stdout if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub property: PropertyArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub numeric: NumericArgs,
    #[arg(long, default_value_t = 10_000)]
    pub runs: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Sampling points `start:stop:step` (default: multiples of `h` up to
    /// the property's time bound).
    #[arg(long)]
    pub times: Option<String>,
    /// Comparison CSV (stdout if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RerunArgs {
    /// JSON or CSV result file with an embedded manifest.
    #[arg(long)]
    pub from: PathBuf,
    /// Directory receiving the re-run outputs, under their original names.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// The invocation, parameters and environment of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub wall_clock_s: f64,
    pub threads: usize,
    #[serde(flatten)]
    pub invocation: Invocation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Invocation {
    Check(CheckArgs),
    Simulate(SimulateArgs),
    Compare(CompareArgs),
}

impl RunManifest {
    fn new(invocation: Invocation, started: Instant) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_s: started.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
            invocation,
        }
    }

    /// Reads the manifest embedded in a JSON or CSV result file.
    pub fn read_from(path: &Path) -> Result<Self, CliError> {
        let text = read(path)?;
        if let Some(line) = text.lines().find_map(|l| l.strip_prefix("# manifest: ")) {
            return Ok(serde_json::from_str(line)?);
        }
        let v: serde_json::Value = serde_json::from_str(&text)?;
        let m = v
            .get("manifest")
            .ok_or_else(|| CliError::Usage(format!("{}: no embedded manifest", path.display())))?;
        Ok(serde_json::from_value(m.clone())?)
    }

    fn csv_header(&self) -> Result<String, CliError> {
        Ok(format!("# manifest: {}\n", serde_json::to_string(self)?))
    }
}

/// Relative errors of a CLA curve against reference values, normalized per
/// sampling point; points where the reference is 0 are skipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorMetrics {
    pub eps_avg_rel: f64,
    pub eps_max_rel: f64,
    pub points_used: usize,
    pub points_total: usize,
}

/// Largest 95% half-width, relative to the estimate, at which an SSA point
/// counts as resolved.
pub const RESOLVED_HALF_WIDTH: f64 = 0.1;

impl ErrorMetrics {
    /// As [`ErrorMetrics::compute`], restricted to SSA points whose
    /// confidence half-width is at most `tol` times the estimate.
    pub fn resolved(cla: &[f64], ssa: &[Estimate], tol: f64) -> Self {
        let (c, r): (Vec<f64>, Vec<f64>) = cla
            .iter()
            .zip(ssa)
            .filter(|(_, e)| e.value != 0.0 && 0.5 * (e.ci_hi - e.ci_lo) <= tol * e.value.abs())
            .map(|(c, e)| (*c, e.value))
            .unzip();
        Self {
            points_total: cla.len(),
            ..Self::compute(&c, &r)
        }
    }

    pub fn compute(cla: &[f64], reference: &[f64]) -> Self {
        let rel: Vec<f64> = cla
            .iter()
            .zip(reference)
            .filter(|(_, r)| **r != 0.0)
            .map(|(c, r)| (c - r).abs() / r.abs())
            .collect();
        let n = rel.len();
        Self {
            eps_avg_rel: if n == 0 { 0.0 } else { rel.iter().sum::<f64>() / n as f64 },
            eps_max_rel: rel.iter().copied().fold(0.0, f64::max),
            points_used: n,
            points_total: cla.len(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub results: Vec<QueryResult>,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub times: Vec<f64>,
    pub cla: Vec<f64>,
    pub ssa: Vec<Estimate>,
    pub metrics: ErrorMetrics,
    /// Metrics over points resolved to [`RESOLVED_HALF_WIDTH`].
    pub metrics_resolved: ErrorMetrics,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|source| CliError::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => io::stdout().write_all(text.as_bytes()).map_err(|source| CliError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    }
}

/// Shortest round-trip form, with an exponent for very small or large
/// magnitudes.
fn num(v: f64) -> String {
    format!("{v:?}")
}

/// `start:stop:step`, optionally prefixed by a variable name.
pub fn parse_range(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("invalid range `{spec}`, expected start:stop:step"));
    let parts: Vec<&str> = spec.split(':').collect();
    let nums = match parts.len() {
        3 => &parts[..],
        4 if parts[0] == "T" => &parts[1..],
        _ => return Err(bad()),
    };
    let v: Vec<f64> = nums.iter().map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let (start, stop, step) = (v[0], v[1], v[2]);
    if !(step > 0.0 && start >= 0.0 && stop >= start && stop.is_finite()) {
        return Err(bad());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

fn csv_text(header: &str, rows: impl IntoIterator<Item = Vec<String>>, columns: &[String]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(columns)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?)
        .expect("csv output is UTF-8");
    Ok(format!("{header}{body}"))
}

fn leaf<'a>(prop: &'a Property, what: &str) -> Result<&'a CslFormula, CliError> {
    match &prop.formula {
        CslFormula::Not(_) | CslFormula::And(..) => {
            Err(CliError::Usage(format!("{what} needs a single temporal operator, not a boolean combination")))
        }
        f => Ok(f),
    }
}

fn max_time_bound(f: &CslFormula) -> f64 {
    match f {
        CslFormula::Not(g) => max_time_bound(g),
        CslFormula::And(a, b) => max_time_bound(a).max(max_time_bound(b)),
        leaf => leaf.time_bound().unwrap_or(0.0),
    }
}

/// Runs `check`; returns the report and whether every verdict holds.
pub fn cmd_check(args: &CheckArgs) -> Result<(CheckReport, bool), CliError> {
    let started = Instant::now();
    let model = args.model.load()?;
    let units: Units = args.model.units.into();
    let props = args.property.load(&model, units)?;
    let cfg = args.numeric.config()?;
    let results = props
        .iter()
        .enumerate()
        .map(|(i, p)| csl::check(&model, p, &cfg).map_err(|source| CliError::Property { index: i + 1, source }))
        .collect::<Result<Vec<_>, _>>()?;
    let satisfied = results.iter().all(QueryResult::satisfied);

    let mut sweep_text = None;
    if let Some(spec) = &args.sweep {
        let times = parse_range(spec)?;
        let mut columns = vec!["T".to_string()];
        let mut curves = Vec::new();
        for (i, p) in props.iter().enumerate() {
            let f = leaf(p, "--sweep")?;
            curves.push(csl::curve(&model, p, f, &cfg, &times).map_err(|source| CliError::Property { index: i + 1, source })?);
            columns.push(if props.len() == 1 { "value".into() } else { format!("value_{}", i + 1) });
        }
        let rows: Vec<Vec<String>> = times
            .iter()
            .enumerate()
            .map(|(j, t)| std::iter::once(num(*t)).chain(curves.iter().map(|c| num(c[j]))).collect())
            .collect();
        sweep_text = Some((rows, columns));
    }

    let mut cla_text = None;
    if args.dump_cla.is_some() {
        let horizon = props.iter().map(|p| max_time_bound(&p.formula)).fold(0.0, f64::max);
        let sol = solve_cla(&model, horizon, cfg.h, cfg.method)?;
        let n = model.num_species();
        let mut columns = vec!["t".to_string()];
        columns.extend(model.species.iter().map(|s| format!("phi_{s}")));
        for a in 0..n {
            for b in a..n {
                columns.push(format!("V_{}_{}", model.species[a], model.species[b]));
            }
        }
        let rows: Vec<Vec<String>> = (0..=sol.steps())
            .map(|k| {
                let mut r = vec![num(sol.time(k))];
                r.extend(sol.phi[k].iter().map(|&v| num(v)));
                for a in 0..n {
                    for b in a..n {
                        r.push(num(sol.cov[k][(a, b)]));
                    }
                }
                r
            })
            .collect();
        cla_text = Some((rows, columns));
    }

    let mut dist_text = None;
    if let Some(d) = &args.dump_dist {
        let k: usize = d[0]
            .parse()
            .map_err(|_| CliError::Usage(format!("--dump-dist step `{}` is not an integer", d[0])))?;
        let prop = &props[0];
        let f = leaf(prop, "--dump-dist")?;
        let out = csl::evaluate_leaf(&model, prop, f, &cfg, Some(k))?;
        let (_, support) = out
            .propagation
            .and_then(|r| r.snapshot)
            .ok_or_else(|| CliError::Usage(format!("step {k} is not reached by the first property")))?;
        let m = match f {
            CslFormula::ProbUntil { safe, goal, .. } => normalize(&[safe, goal])?.rows.len(),
            CslFormula::ProbReach { target, .. } => normalize(&[target])?.rows.len(),
            _ => out.diagnostics.as_ref().map_or(0, |d| d.projection.len()),
        };
        let grid = GridConfig {
            dz: cfg.dz,
            th: cfg.th,
            support_cap: cfg.support_cap,
        };
        let mut columns = vec!["k".to_string(), "t".to_string()];
        columns.extend((0..m).map(|i| format!("z{i}")));
        columns.push("mass".into());
        let rows: Vec<Vec<String>> = support
            .iter()
            .map(|(c, p)| {
                let mut r = vec![k.to_string(), num(k as f64 * cfg.h)];
                r.extend(c[..m].iter().map(|&i| num(grid.center(i))));
                r.push(num(*p));
                r
            })
            .collect();
        dist_text = Some((PathBuf::from(&d[1]), rows, columns));
    }

    let manifest = RunManifest::new(Invocation::Check(args.clone()), started);
    let header = manifest.csv_header()?;
    if let Some((rows, columns)) = sweep_text {
        let path = args.sweep_out.clone().or_else(|| args.out.as_ref().map(|o| o.with_extension("sweep.csv")));
        write(path.as_deref(), &csv_text(&header, rows, &columns)?)?;
    }
    if let (Some(path), Some((rows, columns))) = (&args.dump_cla, cla_text) {
        write(Some(path), &csv_text(&header, rows, &columns)?)?;
    }
    if let Some((path, rows, columns)) = dist_text {
        write(Some(&path), &csv_text(&header, rows, &columns)?)?;
    }
    let report = CheckReport { results, manifest };
    let json = serde_json::to_string_pretty(&report)? + "\n";
    write(args.out.as_deref(), &json)?;
    Ok((report, satisfied))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let model = args.model.load()?;
    if !(args.horizon >= 0.0 && args.horizon.is_finite()) || args.runs == 0 {
        return Err(CliError::Usage("--horizon must be finite and non-negative and --runs positive".into()));
    }
    let paths: Vec<ssa::Path> = (0..args.runs as u64)
        .map(|i| ssa::simulate_with(&model, args.horizon, &mut ssa::run_rng(args.seed, i)))
        .collect::<Result<_, _>>()?;
    let mut columns = vec!["run".to_string(), "t".to_string()];
    columns.extend(model.species.iter().cloned());
    let mut rows = Vec::new();
    for (run, p) in paths.iter().enumerate() {
        let ends = p.times.iter().zip(&p.states).chain(std::iter::once((&p.horizon, p.states.last().expect("one segment"))));
        for (t, x) in ends {
            let mut r = vec![run.to_string(), num(*t)];
            r.extend(x.iter().map(u64::to_string));
            rows.push(r);
        }
    }
    let manifest = RunManifest::new(Invocation::Simulate(args.clone()), started);
    write(args.out.as_deref(), &csv_text(&manifest.csv_header()?, rows, &columns)?)
}

/// SSA estimates of a temporal leaf at `times`.
pub fn ssa_curve(
    model: &SrnModel,
    prop: &Property,
    f: &CslFormula,
    times: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<Estimate>, CliError> {
    let reward = |name: &str| -> Result<RewardStructure, CliError> {
        let r = model
            .reward(name)
            .ok_or_else(|| CliError::Usage(format!("unknown reward `{name}`")))?;
        Ok(RewardStructure::new(r.expr.clone(), prop.units))
    };
    Ok(match f {
        CslFormula::ProbReach { t1, target, .. } => ssa::estimate_reach(model, target, *t1, times, cfg)?,
        CslFormula::ProbUntil { t1, safe, goal, .. } => ssa::estimate_until(model, safe, goal, *t1, times, cfg)?,
        CslFormula::RewardCumulative { reward: r, .. } => {
            ssa::estimate_rewards(model, &reward(r)?, RewardVariant::Cumulative, times, cfg)?
        }
        CslFormula::RewardInstant { reward: r, .. } => {
            ssa::estimate_rewards(model, &reward(r)?, RewardVariant::Instant, times, cfg)?
        }
        CslFormula::RewardReach { reward: r, target, .. } => {
            ssa::estimate_rewards(model, &reward(r)?, RewardVariant::Reach(target), times, cfg)?
        }
        CslFormula::Not(_) | CslFormula::And(..) => unreachable!("leaf() rejects boolean nodes"),
    })
}

pub fn cmd_compare(args: &CompareArgs) -> Result<CompareReport, CliError> {
    let started = Instant::now();
    let model = args.model.load()?;
    let units: Units = args.model.units.into();
    let props = args.property.load(&model, units)?;
    if props.len() != 1 {
        return Err(CliError::Usage("compare takes exactly one property".into()));
    }
    let prop = &props[0];
    let f = leaf(prop, "compare")?;
    if !f.is_query() {
        return Err(CliError::Usage("compare needs a `=?` query".into()));
    }
    let cfg = args.numeric.config()?;
    let times = match &args.times {
        Some(spec) => parse_range(spec)?,
        None => {
            let t = f.time_bound().unwrap_or(0.0);
            parse_range(&format!("0:{t}:{}", cfg.h))?
        }
    };
    let cla = csl::curve(&model, prop, f, &cfg, &times)?;
    let ssa = ssa_curve(
        &model,
        prop,
        f,
        &times,
        &SimConfig {
            runs: args.runs,
            seed: args.seed,
        },
    )?;
    let reference: Vec<f64> = ssa.iter().map(|e| e.value).collect();
    let metrics = ErrorMetrics::compute(&cla, &reference);
    let metrics_resolved = ErrorMetrics::resolved(&cla, &ssa, RESOLVED_HALF_WIDTH);

    let manifest = RunManifest::new(Invocation::Compare(args.clone()), started);
    let header = format!(
        "{}# metrics: {}\n# metrics_resolved: {}\n",
        manifest.csv_header()?,
        serde_json::to_string(&metrics)?,
        serde_json::to_string(&metrics_resolved)?
    );
    let columns: Vec<String> = ["T", "cla", "ssa", "ci_lo", "ci_hi", "abs_err", "rel_err"].map(String::from).to_vec();
    let rows = times.iter().zip(&cla).zip(&ssa).map(|((t, c), s)| {
        let rel = if s.value != 0.0 { num((c - s.value).abs() / s.value.abs()) } else { String::new() };
        vec![num(*t), num(*c), num(s.value), num(s.ci_lo), num(s.ci_hi), num((c - s.value).abs()), rel]
    });
    write(args.out.as_deref(), &csv_text(&header, rows, &columns)?)?;
    Ok(CompareReport {
        times,
        cla,
        ssa,
        metrics,
        metrics_resolved,
    })
}

fn relocate(p: &mut Option<PathBuf>, dir: &Path) {
    if let Some(path) = p {
        *path = dir.join(path.file_name().unwrap_or(path.as_os_str()));
    }
}

/// Re-runs a recorded invocation with its outputs moved into `out_dir`.
pub fn cmd_rerun(args: &RerunArgs) -> Result<i32, CliError> {
    let manifest = RunManifest::read_from(&args.from)?;
    fs::create_dir_all(&args.out_dir).map_err(|source| CliError::Io {
        path: args.out_dir.clone(),
        source,
    })?;
    let dir = args.out_dir.as_path();
    match manifest.invocation {
        Invocation::Check(mut a) => {
            if a.sweep.is_some() && a.sweep_out.is_none() {
                a.sweep_out = a.out.as_ref().map(|o| o.with_extension("sweep.csv"));
            }
            relocate(&mut a.out, dir);
            relocate(&mut a.sweep_out, dir);
            relocate(&mut a.dump_cla, dir);
            if let Some(d) = &mut a.dump_dist {
                let mut p = Some(PathBuf::from(&d[1]));
                relocate(&mut p, dir);
                d[1] = p.expect("set").to_string_lossy().into_owned();
            }
            let (_, ok) = cmd_check(&a)?;
            Ok(if ok { 0 } else { 1 })
        }
        Invocation::Simulate(mut a) => {
            relocate(&mut a.out, dir);
            cmd_simulate(&a)?;
            Ok(0)
        }
        Invocation::Compare(mut a) => {
            relocate(&mut a.out, dir);
            cmd_compare(&a)?;
            Ok(0)
        }
    }
}

fn init_threads() {
    if let Some(n) = std::env::var("CLAMC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Fails only when the pool already exists, e.g. on a second call.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Parses `argv` and runs the command. Exit codes: 0 satisfied or query,
/// 1 violated, 2 error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    let result = match &cli.command {
        Command::Check(a) => cmd_check(a).map(|(report, ok)| {
            for r in &report.results {
                if r.at_threshold {
                    eprintln!("warning: `{}` is within 1e-9 of its threshold", r.formula);
                }
            }
            if ok {
                0
            } else {
                1
            }
        }),
        Command::Simulate(a) => cmd_simulate(a).map(|_| 0),
        Command::Compare(a) => cmd_compare(a).map(|r| {
            for (label, m) in [("all", r.metrics), ("resolved", r.metrics_resolved)] {
                eprintln!(
                    "{label:>8}: eps_avg_rel = {:.6}  eps_max_rel = {:.6}  ({} of {} points)",
                    m.eps_avg_rel, m.eps_max_rel, m.points_used, m.points_total
                );
            }
            0
        }),
        Command::Rerun(a) => cmd_rerun(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            2
        }
    }
}
