//! End-to-end runs of the command-line front end.

mod common;

use std::fs;
use std::path::Path;

use clamc::cli::run;
use tempfile::TempDir;

fn clamc(args: &[&str]) -> i32 {
    run(std::iter::once("clamc").chain(args.iter().copied()))
}

fn gene_path() -> String {
    common::model_path("gene_expression.srn").to_string_lossy().into_owned()
}

fn check(formula: &str, out: &Path) -> i32 {
    let model = gene_path();
    clamc(&[
        "check", "--model", &model, "--units", "counts", "--formula", formula, "--h", "2", "--dz", "0.005", "--out",
        out.to_str().unwrap(),
    ])
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> (csv::StringRecord, Vec<csv::StringRecord>) {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    let header = r.headers().unwrap().clone();
    (header, r.records().map(Result::unwrap).collect())
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("r.json");
    let cases = [
        ("P=? [ F<=40 mRNA > Pro + 20 ]", 0),
        ("P>0.05 [ F<=40 mRNA > Pro + 20 ]", 0),
        ("P<0.05 [ F<=40 mRNA > Pro + 20 ]", 1),
        ("P>=0.5 [ (Pro < 10) U<=40 mRNA > 30 ]", 1),
        ("!P>=0.5 [ (Pro < 10) U<=40 mRNA > 30 ]", 0),
        ("R<=1000 [ C<=20 : mrna ]", 0),
        ("R>=1000 [ C<=20 : mrna ]", 1),
        ("P=? [ F<=40 mRNA > ", 2),
        ("P>1.5 [ F<=40 mRNA > 3 ]", 2),
        ("P=? [ F<=40 Foo > 3 ]", 2),
    ];
    for (formula, code) in cases {
        assert_eq!(check(formula, &out), code, "{formula}");
    }
    let model = gene_path();
    assert_eq!(clamc(&["check", "--model", "/nonexistent.srn", "--formula", "P=? [ F<=1 mRNA > 1 ]", "--h", "1", "--dz", "0.01"]), 2);
    assert_eq!(clamc(&["check", "--model", &model, "--formula", "P=? [ F<=1 mRNA > 1 ]", "--h", "-1", "--dz", "0.01"]), 2);
    assert_eq!(clamc(&["frobnicate"]), 2);
}

#[test]
fn query_result_has_value_and_manifest() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("r.json");
    assert_eq!(check("P>0.05 [ F<=40 mRNA > Pro + 20 ]", &out), 0);
    let v = json(&out);
    let r = &v["results"][0];
    let p = r["value"].as_f64().unwrap();
    assert!(p > 0.05 && p < 1.0);
    assert_eq!(r["verdict"], serde_json::Value::Bool(true));
    assert_eq!(r["diagnostics"]["steps"], 20);
    assert_eq!(v["manifest"]["command"], "check");
    assert_eq!(v["manifest"]["h"], 2.0);
}

#[test]
fn sweep_is_monotone() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("r.json");
    let model = gene_path();
    let code = clamc(&[
        "check", "--model", &model, "--units", "counts", "--formula", "P=? [ F<=100 mRNA > Pro + 20 ]", "--h", "5",
        "--dz", "0.005", "--sweep", "T:0:100:5", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let (header, rows) = csv_rows(&out.with_extension("sweep.csv"));
    assert_eq!(header.len(), 2);
    assert_eq!(rows.len(), 21);
    let p: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(p.windows(2).all(|w| w[1] >= w[0]), "{p:?}");
    assert!(p[20] > 0.0);
}

#[test]
fn rerun_reproduces_check_and_compare() {
    let dir = TempDir::new().unwrap();
    let first = dir.path().join("first");
    let again = dir.path().join("again");
    fs::create_dir_all(&first).unwrap();
    let model = gene_path();
    let check_out = first.join("check.json");
    assert_eq!(check("P=? [ (Pro < 10) U<=40 mRNA > 30 ]", &check_out), 0);
    let cmp_out = first.join("cmp.csv");
    let code = clamc(&[
        "compare", "--model", &model, "--units", "counts", "--formula", "P=? [ F<=20 mRNA > Pro + 5 ]", "--h", "2",
        "--dz", "0.005", "--runs", "300", "--seed", "9", "--out", cmp_out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let sim_out = first.join("sim.csv");
    let code = clamc(&["simulate", "--model", &model, "--runs", "2", "--seed", "4", "--horizon", "30", "--out", sim_out.to_str().unwrap()]);
    assert_eq!(code, 0);

    for path in [&check_out, &cmp_out, &sim_out] {
        assert_eq!(clamc(&["rerun", "--from", path.to_str().unwrap(), "--out-dir", again.to_str().unwrap()]), 0);
    }

    let a = json(&check_out)["results"][0]["value"].as_f64().unwrap();
    let b = json(&again.join("check.json"))["results"][0]["value"].as_f64().unwrap();
    assert!((a - b).abs() <= 1e-12);

    let (_, x) = csv_rows(&cmp_out);
    let (_, y) = csv_rows(&again.join("cmp.csv"));
    assert_eq!(x.len(), 11);
    for (r, s) in x.iter().zip(&y) {
        let (c1, c2): (f64, f64) = (r[1].parse().unwrap(), s[1].parse().unwrap());
        assert!((c1 - c2).abs() <= 1e-12);
        assert_eq!(&r[2], &s[2], "SSA column must be bitwise identical");
    }

    let (_, x) = csv_rows(&sim_out);
    let (_, y) = csv_rows(&again.join("sim.csv"));
    assert_eq!(x, y);
}

#[test]
fn simulate_writes_paths() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sim.csv");
    let model = gene_path();
    assert_eq!(clamc(&["simulate", "--model", &model, "--runs", "3", "--horizon", "50", "--out", out.to_str().unwrap()]), 0);
    let (header, rows) = csv_rows(&out);
    assert_eq!(header.iter().collect::<Vec<_>>(), ["run", "t", "mRNA", "Pro"]);
    for run in 0..3 {
        let times: Vec<f64> = rows.iter().filter(|r| r[0] == *run.to_string()).map(|r| r[1].parse().unwrap()).collect();
        assert_eq!(times[0], 0.0);
        assert_eq!(*times.last().unwrap(), 50.0);
        assert!(times.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn compare_against_itself_is_exact() {
    let ssa = [0.1, 0.4, 0.0, 0.9];
    let m = clamc::cli::ErrorMetrics::compute(&ssa, &ssa);
    assert_eq!((m.eps_avg_rel, m.eps_max_rel, m.points_used), (0.0, 0.0, 3));
}
