//! Cumulative, instantaneous and reachability rewards.
//!
//! ```text
//! cargo run --release --example rewards
//! ```

use clamc::abstraction::RewardRule;
use clamc::csl::{check, parse_property, CheckConfig};
use clamc::model::{parse_model, Units};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = parse_model(include_str!("../models/gene_expression.srn"))?;
    let cfg = CheckConfig::new(1.5, 0.005);
    for text in [
        "R=? [ I=100 : mrna ]",
        "R=? [ C<=100 : mrna ]",
        "R=? [ F<=35 mRNA >= 30 : diff ]",
    ] {
        let r = check(&model, &parse_property(text, &model, Units::Counts)?, &cfg)?;
        println!("{text:<34} {:.4}", r.value.unwrap_or(f64::NAN));
    }

    let left = CheckConfig {
        reward_rule: RewardRule::LeftEndpoint,
        ..cfg
    };
    let prop = parse_property("R=? [ F<=35 mRNA >= 30 : diff ]", &model, Units::Counts)?;
    println!("left-endpoint rule: {:.4}", check(&model, &prop, &left)?.value.unwrap_or(f64::NAN));
    Ok(())
}
