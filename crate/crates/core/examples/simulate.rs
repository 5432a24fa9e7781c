//! A few Gillespie trajectories and a Monte Carlo reachability estimate.
//!
//! ```text
//! cargo run --release --example simulate
//! ```

use clamc::csl::{parse_property, CslFormula};
use clamc::model::{parse_model, Units};
use clamc::ssa::{estimate_reach, simulate, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = parse_model(include_str!("../models/gene_expression.srn"))?;
    for seed in 0..3 {
        let path = simulate(&model, 200.0, seed)?;
        let last = path.states.last().expect("paths start with the initial state");
        println!("seed {seed}: {} events, final state {:?}", path.times.len() - 1, last);
    }

    let prop = parse_property("P=? [ F<=100 mRNA > Pro + 20 ]", &model, Units::Counts)?;
    let CslFormula::ProbReach { target, .. } = &prop.formula else {
        unreachable!()
    };
    let times = [25.0, 50.0, 75.0, 100.0];
    let est = estimate_reach(&model, target, 0.0, &times, &SimConfig { runs: 20_000, seed: 1 })?;
    for (t, e) in times.iter().zip(est) {
        println!("T = {t:>5}  P = {:.4}  [{:.4}, {:.4}]", e.value, e.ci_lo, e.ci_hi);
    }
    Ok(())
}
