//! Fluid limit and fluctuation covariance of the gene expression network.
//!
//! ```text
//! cargo run --example moments
//! ```

use clamc::cla::solve_cla;
use clamc::model::parse_model;
use clamc::ode::Method;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = parse_model(include_str!("../models/gene_expression.srn"))?;
    let n = model.system_size;
    let sol = solve_cla(&model, 1000.0, 100.0, Method::default())?;
    println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "t", "E[mRNA]", "Var[mRNA]", "E[Pro]", "Var[Pro]");
    for k in 0..=sol.steps() {
        let (phi, v) = (&sol.phi[k], &sol.cov[k]);
        println!(
            "{:>6} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            sol.time(k),
            n * phi[0],
            n * v[(0, 0)],
            n * phi[1],
            n * v[(1, 1)]
        );
    }
    Ok(())
}
