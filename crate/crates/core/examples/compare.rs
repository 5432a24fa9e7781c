//! CLA against SSA on a shared sampling grid, with the relative error
//! metrics reported by `clamc compare`.
//!
//! ```text
//! cargo run --release --example compare
//! ```

use clamc::cli::{ssa_curve, ErrorMetrics, RESOLVED_HALF_WIDTH};
use clamc::csl::{curve, parse_property, CheckConfig};
use clamc::model::{parse_model, Units};
use clamc::ssa::SimConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = parse_model(include_str!("../models/gene_expression.srn"))?;
    let prop = parse_property("P=? [ F<=1000 mRNA >= 175 ]", &model, Units::Counts)?;
    let times: Vec<f64> = (0..=20).map(|i| 50.0 * i as f64).collect();
    let cla = curve(&model, &prop, &prop.formula, &CheckConfig::new(1.85, 0.005), &times)?;
    let ssa = ssa_curve(&model, &prop, &prop.formula, &times, &SimConfig { runs: 10_000, seed: 1 })?;
    for ((t, c), s) in times.iter().zip(&cla).zip(&ssa) {
        println!("T = {t:>6}  CLA {c:.5}  SSA {:.5} [{:.5}, {:.5}]", s.value, s.ci_lo, s.ci_hi);
    }
    let reference: Vec<f64> = ssa.iter().map(|e| e.value).collect();
    let all = ErrorMetrics::compute(&cla, &reference);
    let resolved = ErrorMetrics::resolved(&cla, &ssa, RESOLVED_HALF_WIDTH);
    println!("all points:      eps_avg {:.4}  eps_max {:.4}", all.eps_avg_rel, all.eps_max_rel);
    println!(
        "resolved points: eps_avg {:.4}  eps_max {:.4}  ({} of {})",
        resolved.eps_avg_rel, resolved.eps_max_rel, resolved.points_used, resolved.points_total
    );
    Ok(())
}
