//! Acceptance run against the stochastic simulation oracle.
//!
//! Prints one `PASS`/`FAIL` line per criterion. Criteria listed in
//! [`KNOWN_RED`] are reported but do not fail the run.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use clamc::abstraction::{kernel_row, GridConfig, Phase, RewardRule, TargetRegion};
use clamc::cla::{kernel_step, project, solve_cla, ProjectionSpec};
use clamc::cli::{ssa_curve, ErrorMetrics, RESOLVED_HALF_WIDTH};
use clamc::csl::{self, parse_property, CheckConfig};
use clamc::gauss::bvn_upper;
use clamc::model::{parse_model, SrnModel, Units};
use clamc::ode::{Method, Tolerances};
use clamc::ssa::{Estimate, SimConfig};
use nalgebra::{DMatrix, DVector};

/// Criteria that stay red; the analysis lives in the project notes.
const KNOWN_RED: &[u32] = &[];

/// Half cell width of one count at `N = 100`.
const DZ_GENE: f64 = 0.005;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

fn leaf(model: &SrnModel, formula: &str) -> csl::Property {
    parse_property(formula, model, Units::Counts).expect("acceptance formulas parse")
}

fn cla_curve(model: &SrnModel, formula: &str, cfg: &CheckConfig, times: &[f64]) -> Vec<f64> {
    let p = leaf(model, formula);
    csl::curve(model, &p, &p.formula, cfg, times).expect("CLA curve")
}

fn ssa(model: &SrnModel, formula: &str, times: &[f64], runs: usize, seed: u64) -> Vec<Estimate> {
    let p = leaf(model, formula);
    ssa_curve(model, &p, &p.formula, times, &SimConfig { runs, seed }).expect("SSA curve")
}

fn max_abs(a: &[f64], b: &[Estimate]) -> f64 {
    a.iter().zip(b).map(|(x, e)| (x - e.value).abs()).fold(0.0, f64::max)
}

fn tight() -> Method {
    Method::Adaptive(Tolerances { rtol: 1e-10, atol: 1e-13 })
}

/// Mean and covariance of the linear gene network in counts, from the
/// matrix exponential of the moment system.
fn gene_moments(t: f64) -> [f64; 5] {
    let (a, k, g1, g2) = (0.5, 0.0058, 0.0029, 0.0001);
    // State: m, p, Vmm, Vmp, Vpp, 1.
    #[rustfmt::skip]
    let a_mat = DMatrix::from_row_slice(6, 6, &[
        -g1, 0.0, 0.0, 0.0, 0.0, a,
        k, -g2, 0.0, 0.0, 0.0, 0.0,
        g1, 0.0, -2.0 * g1, 0.0, 0.0, a,
        0.0, 0.0, k, -(g1 + g2), 0.0, 0.0,
        k, g2, 0.0, 2.0 * k, -2.0 * g2, 0.0,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    ]);
    let y = (a_mat * t).exp() * DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    [y[0], y[1], y[2], y[3], y[4]]
}

fn c1_linear_exactness() -> Outcome {
    let model = common::gene();
    let n = model.system_size;
    let sol = solve_cla(&model, 500.0, 50.0, tight()).unwrap();
    let mut worst: f64 = 0.0;
    for t in [50.0, 100.0, 200.0, 500.0] {
        let (phi, v) = sol.moments_at(t).unwrap();
        let exact = gene_moments(t);
        let ours = [n * phi[0], n * phi[1], n * v[(0, 0)], n * v[(0, 1)], n * v[(1, 1)]];
        for (o, e) in ours.iter().zip(&exact) {
            worst = worst.max(common::rel_diff(*o, *e));
        }
    }
    let long = solve_cla(&model, 5000.0, 500.0, tight()).unwrap();
    let (phi, v) = long.moments_at(5000.0).unwrap();
    let fano = v[(0, 0)] / phi[0];
    Outcome::new(
        worst <= 1e-4 && (0.99..=1.01).contains(&fano),
        format!("max rel moment error {worst:.2e}, mRNA variance/mean {fano:.6}"),
    )
}

fn c2_reachability() -> Outcome {
    let model = common::gene();
    let f = "P=? [ F<=100 mRNA > Pro + 20 ]";
    let times = grid(5.0, 100.0, 5.0);
    let cla = cla_curve(&model, f, &CheckConfig::new(1.85, DZ_GENE), &times);
    let s = ssa(&model, f, &times, 30_000, 1);
    let err = max_abs(&cla, &s);
    Outcome::new(err <= 0.03, format!("max |CLA - SSA| = {err:.4} over T = 5..100"))
}

fn c3_until() -> Outcome {
    let model = common::gene();
    let f = "P=? [ (Pro < 10) U<=100 (mRNA > 30) ]";
    let times = grid(5.0, 100.0, 5.0);
    let s = ssa(&model, f, &times, 30_000, 1);
    let coarse = max_abs(&cla_curve(&model, f, &CheckConfig::new(5.0, DZ_GENE), &times), &s);
    let fine = max_abs(&cla_curve(&model, f, &CheckConfig::new(1.5, DZ_GENE), &times), &s);
    Outcome::new(
        coarse <= 0.05 && fine <= 0.03,
        format!("max deviation {coarse:.4} at h=5, {fine:.4} at h=1.5"),
    )
}

fn c4_tail() -> Outcome {
    let model = common::gene();
    let f = "P=? [ F<=1000 mRNA >= 175 ]";
    let times = grid(0.0, 1000.0, 50.0);
    let cla = cla_curve(&model, f, &CheckConfig::new(1.85, DZ_GENE), &times);
    let s = ssa(&model, f, &times, 30_000, 1);
    let monotone = cla.windows(2).all(|w| w[1] >= w[0]);
    let m = ErrorMetrics::resolved(&cla, &s, RESOLVED_HALF_WIDTH);
    Outcome::new(
        cla[cla.len() - 1] > 0.0 && monotone && m.eps_avg_rel <= 0.05,
        format!(
            "P(T=1000) = {:.4}, monotone {monotone}, eps_avg {:.4} over {} resolved of {} points",
            cla[cla.len() - 1],
            m.eps_avg_rel,
            m.points_used,
            m.points_total
        ),
    )
}

fn c5_rewards() -> Outcome {
    let model = common::gene();
    let f = "R=? [ F<=35 mRNA >= 30 : diff ]";
    let eps = |h: f64, rule: RewardRule| {
        let times = grid(0.0, 35.0, h);
        let cfg = CheckConfig {
            reward_rule: rule,
            ..CheckConfig::new(h, DZ_GENE)
        };
        let cla = cla_curve(&model, f, &cfg, &times);
        let reference: Vec<f64> = ssa(&model, f, &times, 10_000, 1).iter().map(|e| e.value).collect();
        ErrorMetrics::compute(&cla, &reference).eps_avg_rel
    };
    let trap = eps(1.5, RewardRule::Trapezoid);
    let left: Vec<f64> = [5.0, 3.0, 1.5].iter().map(|&h| eps(h, RewardRule::LeftEndpoint)).collect();
    let decreasing = left.windows(2).all(|w| w[1] < w[0]);
    Outcome::new(
        trap <= 0.10 && decreasing,
        format!(
            "eps_avg {trap:.4} at h=1.5; left-endpoint sequence {:.4} > {:.4} > {:.4}: {decreasing}",
            left[0], left[1], left[2]
        ),
    )
}

fn c6_phosphorelay() -> Outcome {
    let base = common::load("phosphorelay_fast.srn");
    let times = grid(0.0, 10.0, 0.5);
    let mut eps = Vec::new();
    let mut cla_time = Duration::ZERO;
    for (n, h, f) in [
        (800.0, 0.1, "P=? [ F<=10 L3p > 180 ]"),
        (400.0, 0.5, "P=? [ F<=10 L3p > 80 ]"),
    ] {
        let model = base.rescaled(n);
        let started = Instant::now();
        let cla = cla_curve(&model, f, &CheckConfig::new(h, 0.5 / n), &times);
        if n == 800.0 {
            cla_time = started.elapsed();
        }
        let s = ssa(&model, f, &times, 30_000, 1);
        eps.push(ErrorMetrics::resolved(&cla, &s, RESOLVED_HALF_WIDTH).eps_avg_rel);
    }
    Outcome::new(
        eps[0] <= 0.02 && eps[1] <= 0.08 && cla_time <= Duration::from_secs(600),
        format!(
            "eps_avg {:.4} (N=800, h=0.1, CLA {:.1}s), {:.4} (N=400, h=0.5)",
            eps[0],
            cla_time.as_secs_f64(),
            eps[1]
        ),
    )
}

/// Successive differences of `values` are non-increasing.
fn settles(values: &[f64]) -> bool {
    let d: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    d.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9))
}

fn c7_convergence() -> Outcome {
    let model = common::gene();
    let value = |f: &str, h: f64, dz: f64, t: f64| cla_curve(&model, f, &CheckConfig::new(h, dz), &[t])[0];
    let reach = "P=? [ F<=40 mRNA > Pro + 20 ]";
    let until = "P=? [ (Pro < 10) U<=80 (mRNA > 30) ]";
    let suites: [(&str, Vec<f64>); 4] = [
        ("reach h", [2.0, 1.0, 0.5, 0.25].map(|h| value(reach, h, 0.000625, 40.0)).to_vec()),
        ("reach dz", [0.01, 0.005, 0.0025, 0.00125].map(|dz| value(reach, 1.0, dz, 40.0)).to_vec()),
        ("until h", [8.0, 4.0, 2.0, 1.0].map(|h| value(until, h, 0.0025, 80.0)).to_vec()),
        ("until dz", [0.02, 0.01, 0.005, 0.0025].map(|dz| value(until, 4.0, dz, 80.0)).to_vec()),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, v) in &suites {
        let ok = settles(v);
        pass &= ok;
        let d: Vec<String> = v.windows(2).map(|w| format!("{:.2e}", (w[1] - w[0]).abs())).collect();
        detail.push(format!("{name} [{}]{}", d.join(" "), if ok { "" } else { " !" }));
    }
    Outcome::new(pass, detail.join("; "))
}

fn c8_micro() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    let model = common::gene();
    let sol = solve_cla(&model, 40.0, 2.0, Method::default()).unwrap();
    let stats = project(&sol, &ProjectionSpec::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()).unwrap();
    let g = GridConfig::new(DZ_GENE);
    let mut row_err: f64 = 0.0;
    for k in [1, 5, 10, 19] {
        let kernel = kernel_step(&stats, k).unwrap();
        let c = [g.cell_of(stats.mean[k][0]), g.cell_of(stats.mean[k][1])];
        let phase = Phase {
            success: Some(TargetRegion {
                bounds: vec![clamc::gauss::Interval::new(0.3, f64::INFINITY), clamc::gauss::Interval::FULL],
            }),
            survive: TargetRegion::full(2),
        };
        let row = kernel_row(&kernel, &g, &phase, c).unwrap();
        let total: f64 = row.cells.iter().map(|x| x.1).sum::<f64>() + row.success + row.fail + row.truncated;
        row_err = row_err.max((total - 1.0).abs());
    }
    pass &= row_err <= 1e-9;
    notes.push(format!("row sum err {row_err:.1e}"));

    let lemma = (0..6)
        .map(|k| common::lemma::cross_cov_error(&common::lemma::dimerization(0.01, 0.2), 0.5, k))
        .fold(0.0, f64::max);
    pass &= lemma <= 1e-5;
    notes.push(format!("cross-cov rel err {lemma:.1e}"));

    let q = (bvn_upper(0.0, 0.0, 0.5) - 1.0 / 3.0).abs();
    pass &= q <= 1e-8;
    notes.push(format!("quadrant err {q:.1e}"));

    let dense = common::brute::max_discrepancy();
    pass &= dense <= 1e-12;
    notes.push(format!("dense vs sparse {dense:.1e}"));

    let dimer = common::lemma::dimerization(0.01, 0.2);
    let mut jac_err: f64 = 0.0;
    for phi in [[0.3, 0.2], [1.1, 0.05], [0.7, 0.9]] {
        let jac = dimer.jacobian(&phi).unwrap();
        for j in 0..2 {
            let (mut up, mut down) = (phi, phi);
            up[j] += 1e-6;
            down[j] -= 1e-6;
            let fd = (dimer.drift(&up).unwrap() - dimer.drift(&down).unwrap()) / 2e-6;
            for i in 0..2 {
                jac_err = jac_err.max((jac[(i, j)] - fd[i]).abs() / jac[(i, j)].abs().max(1.0));
            }
        }
    }
    pass &= jac_err <= 1e-5;
    notes.push(format!("Jacobian err {jac_err:.1e}"));

    let d = 0.3;
    let death = parse_model(&format!("N: 1\nspecies: A\ninit: A=1\nreaction: A -> @ {d} * A\n")).unwrap();
    let times = [0.5, 1.0, 2.0, 5.0];
    let est = ssa(&death, "P=? [ F<=5 A <= 0 ]", &times, 100_000, 10);
    let mut z: f64 = 0.0;
    for (t, e) in times.iter().zip(&est) {
        let p = 1.0 - (-d * t).exp();
        z = z.max((e.value - p).abs() / (p * (1.0 - p) / 1e5).sqrt());
    }
    pass &= z < 3.0;
    notes.push(format!("extinction max |z| {z:.2}"));

    Outcome::new(pass, notes.join(", "))
}

type Criterion = (u32, &'static str, fn() -> Outcome, Duration);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (1, "linear-model exactness", c1_linear_exactness, Duration::from_secs(5)),
        (2, "reachability vs SSA", c2_reachability, Duration::from_secs(300)),
        (3, "until vs SSA", c3_until, Duration::from_secs(900)),
        (4, "tail reachability", c4_tail, Duration::from_secs(600)),
        (5, "reachability rewards", c5_rewards, Duration::from_secs(600)),
        (6, "phosphorelay", c6_phosphorelay, Duration::from_secs(1200)),
        (7, "convergence under refinement", c7_convergence, Duration::from_secs(1800)),
        (8, "micro-oracles", c8_micro, Duration::from_secs(60)),
    ];
    let only: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut unexpected = 0;
    for (id, name, run, budget) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let started = Instant::now();
        let outcome = run();
        let elapsed = started.elapsed();
        let pass = outcome.pass && elapsed <= budget;
        let tag = match (pass, KNOWN_RED.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!(
            "[{tag}] criterion {id} {name}: {} ({:.1}s of {}s)",
            outcome.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
