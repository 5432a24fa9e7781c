//! Time-bounded until on a two-dimensional projection: mRNA exceeds 30
//! while protein stays below 10.
//!
//! ```text
//! cargo run --release --example until
//! ```

use clamc::csl::{check, parse_property, CheckConfig};
use clamc::model::{parse_model, Units};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = parse_model(include_str!("../models/gene_expression.srn"))?;
    let prop = parse_property("P=? [ (Pro < 10) U<=100 (mRNA > 30) ]", &model, Units::Counts)?;
    for h in [5.0, 2.5, 1.5] {
        let r = check(&model, &prop, &CheckConfig::new(h, 0.005))?;
        let d = r.diagnostics.as_ref().expect("temporal leaf");
        println!(
            "h = {h:<4} P = {:.4}  steps {}  max support {}  truncated {:.1e}",
            r.value.unwrap_or(f64::NAN),
            d.steps,
            d.max_support,
            d.truncated
        );
    }
    Ok(())
}
