//! Seven-species phosphorelay: reachability of a high phosphorylated
//! output level at two system sizes.
//!
//! ```text
//! cargo run --release --example phosphorelay
//! ```

use std::time::Instant;

use clamc::csl::{curve, parse_property, CheckConfig};
use clamc::model::{parse_model, Units};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = parse_model(include_str!("../models/phosphorelay_fast.srn"))?;
    let times: Vec<f64> = (0..=20).map(|i| 0.5 * i as f64).collect();
    for (n, h, text) in [(800.0, 0.1, "P=? [ F<=10 L3p > 180 ]"), (400.0, 0.5, "P=? [ F<=10 L3p > 80 ]")] {
        let model = base.rescaled(n);
        let prop = parse_property(text, &model, Units::Counts)?;
        let started = Instant::now();
        let p = curve(&model, &prop, &prop.formula, &CheckConfig::new(h, 0.5 / n), &times)?;
        println!("N = {n}, h = {h}: {text} ({:.2}s)", started.elapsed().as_secs_f64());
        for (t, v) in times.iter().zip(p).filter(|(_, v)| *v > 1e-6) {
            println!("  Time = {t:>4}  {v:.4}");
        }
    }
    Ok(())
}
