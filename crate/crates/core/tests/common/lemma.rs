#![allow(dead_code)]
//! Cross-covariance of the fluctuation process against a direct integration
//! of `∂_s C(t, s) = C(t, s)·J(s)ᵀ` along the fluid limit.

use clamc::cla::{cross_cov, solve_cla};
use clamc::model::{parse_model, SrnModel};
use clamc::ode::{integrate, Method, OdeProblem, Tolerances};
use nalgebra::DMatrix;

pub fn dimerization(k1: f64, k2: f64) -> SrnModel {
    parse_model(&format!(
        "system_size: 50\nspecies: A B\ninit: A=40 B=5\n\
         reaction: A + A -> B @ {k1} * A * A\n\
         reaction: B -> A + A @ {k2} * B\n\
         reaction: -> A @ 2\n"
    ))
    .unwrap()
}

pub fn tight() -> Method {
    Method::Adaptive(Tolerances { rtol: 1e-11, atol: 1e-14 })
}

/// Relative Frobenius error of `cross_cov` at step `k` with step `h`.
pub fn cross_cov_error(model: &SrnModel, h: f64, k: usize) -> f64 {
    let sol = solve_cla(model, h * (k + 1) as f64, h, tight()).unwrap();
    let n = model.num_species();
    let mut y0: Vec<f64> = sol.phi[k].iter().copied().collect();
    for i in 0..n {
        for j in 0..n {
            y0.push(sol.cov[k][(i, j)]);
        }
    }
    let m = model.clone();
    let mut problem = OdeProblem::new(0.0, y0, move |_, y, out| {
        let d = m.drift(&y[..n]).map_err(|e| e.to_string())?;
        let jac = m.jacobian(&y[..n]).map_err(|e| e.to_string())?;
        let dc = DMatrix::from_row_slice(n, n, &y[n..]) * jac.transpose();
        out[..n].copy_from_slice(d.as_slice());
        for i in 0..n {
            for j in 0..n {
                out[n + i * n + j] = dc[(i, j)];
            }
        }
        Ok(())
    });
    let traj = integrate(&mut problem, h, &[], tight()).unwrap();
    let direct = DMatrix::from_row_slice(n, n, &traj.last()[n..]);
    (cross_cov(&sol, k) - &direct).norm() / direct.norm().max(1e-12)
}
