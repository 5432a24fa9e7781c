//! Probability that mRNA overtakes protein by 20 molecules within `T`.
//!
//! ```text
//! cargo run --release --example reach
//! ```

use clamc::csl::{check, curve, parse_property, CheckConfig};
use clamc::model::{parse_model, Units};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = parse_model(include_str!("../models/gene_expression.srn"))?;
    let cfg = CheckConfig::new(1.85, 0.5 / model.system_size);

    let prop = parse_property("P=? [ F<=100 mRNA > Pro + 20 ]", &model, Units::Counts)?;
    let times: Vec<f64> = (0..=20).map(|i| 5.0 * i as f64).collect();
    for (t, p) in times.iter().zip(curve(&model, &prop, &prop.formula, &cfg, &times)?) {
        println!("T = {t:>5}  P = {p:.4}");
    }

    let bounded = parse_property("P>=0.2 [ F<=100 mRNA > Pro + 20 ]", &model, Units::Counts)?;
    let r = check(&model, &bounded, &cfg)?;
    println!("{}: {:?} (value {:.4})", r.formula, r.verdict, r.value.unwrap_or(f64::NAN));
    Ok(())
}
