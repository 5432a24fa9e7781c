//! Central limit approximation: fluid limit, fluctuation covariance,
//! state-transition matrices and the projected Gaussian transition kernel.
//!
//! The population is approximated as `Y(t) ≈ N·Φ(t) + √N·G(t)` with `G` a
//! zero-mean Gaussian process. On the sampling grid `t_k = k·h` the solver
//! stores `Φ(t_k)`, `V(t_k) = cov G(t_k)` and `Υ(t_{k+1}, t_k)`, from which
//! `cov(G(t_k), G(t_{k+1})) = V(t_k)·Υ(t_{k+1}, t_k)ᵀ`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{ModelError, SrnModel};
use crate::ode::{integrate, Method, OdeError, OdeProblem, Trajectory};

/// Eigenvalue floor (normalized units²) below which a projected variance is
/// treated as singular when conditioning.
pub const SINGULARITY_FLOOR: f64 = 1e-12;

/// Tolerance for negative residual-variance eigenvalues caused by round-off.
pub const RESIDUAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ClaError {
    #[error("CLA integration failed: {0}")]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid CLA request: {0}")]
    Invalid(String),
    #[error("residual covariance of step {step} has eigenvalue {eigenvalue:e} below -{RESIDUAL_TOLERANCE:e}")]
    Inconsistent { step: usize, eigenvalue: f64 },
}

/// Time-gridded CLA quantities on `t_k = k·h`, `k = 0..=steps`.
#[derive(Debug, Clone)]
pub struct ClaSolution {
    pub system_size: f64,
    pub h: f64,
    /// Fluid limit `Φ(t_k)` in concentrations.
    pub phi: Vec<DVector<f64>>,
    /// Fluctuation covariance `V(t_k)`.
    pub cov: Vec<DMatrix<f64>>,
    /// `Υ(t_{k+1}, t_k)`, one per step.
    pub transition: Vec<DMatrix<f64>>,
    segments: Vec<Trajectory>,
}

fn flatten_into(m: &DMatrix<f64>, out: &mut [f64]) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = m[(i, j)];
        }
    }
}

fn unflatten(n: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, &data[..n * n])
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

impl ClaSolution {
    pub fn steps(&self) -> usize {
        self.transition.len()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps())
    }

    pub fn num_species(&self) -> usize {
        self.phi[0].len()
    }

    /// `Φ(t)` and `V(t)` at an arbitrary time inside the horizon, by dense
    /// output of the integration segment containing `t`.
    pub fn moments_at(&self, t: f64) -> Result<(DVector<f64>, DMatrix<f64>), ClaError> {
        if !(t >= 0.0) || t > self.horizon() * (1.0 + 1e-12) + 1e-12 {
            return Err(ClaError::Invalid(format!(
                "time {t} outside the solved horizon [0, {}]",
                self.horizon()
            )));
        }
        let k_real = t / self.h;
        let k = k_real.round();
        if (k_real - k).abs() < 1e-9 && (k as usize) <= self.steps() {
            let k = k as usize;
            return Ok((self.phi[k].clone(), self.cov[k].clone()));
        }
        let seg = (k_real.floor() as usize).min(self.steps() - 1);
        let n = self.num_species();
        let y = self.segments[seg].eval(t);
        let mut v = unflatten(n, &y[n..]);
        symmetrize(&mut v);
        Ok((DVector::from_column_slice(&y[..n]), v))
    }
}

/// Integrates the fluid limit, covariance and per-step state-transition
/// matrices on `[0, T]` sampled every `h`. The grid is extended to the first
/// multiple of `h` at or beyond `T`.
pub fn solve_cla(model: &SrnModel, horizon: f64, h: f64, method: Method) -> Result<ClaSolution, ClaError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(ClaError::Invalid(format!("time step h = {h} must be positive")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(ClaError::Invalid(format!("horizon {horizon} must be non-negative")));
    }
    let steps = ((horizon / h) - 1e-9).ceil().max(0.0) as usize;
    let n = model.num_species();
    let mut phi = vec![model.initial_concentration()];
    let mut cov = vec![DMatrix::zeros(n, n)];
    let mut transition = Vec::with_capacity(steps);
    let mut segments = Vec::with_capacity(steps);

    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<(), String> {
        let d = model.local_dynamics(&y[..n]).map_err(|e| e.to_string())?;
        let v = unflatten(n, &y[n..]);
        let u = unflatten(n, &y[n + n * n..]);
        dy[..n].copy_from_slice(d.drift.as_slice());
        let dv = &d.jacobian * &v + &v * d.jacobian.transpose() + &d.diffusion;
        flatten_into(&dv, &mut dy[n..n + n * n]);
        let du = &d.jacobian * &u;
        flatten_into(&du, &mut dy[n + n * n..]);
        Ok(())
    };

    for k in 0..steps {
        let t0 = k as f64 * h;
        let t1 = (k + 1) as f64 * h;
        let mut y0 = vec![0.0; n + 2 * n * n];
        y0[..n].copy_from_slice(phi[k].as_slice());
        flatten_into(&cov[k], &mut y0[n..n + n * n]);
        for i in 0..n {
            y0[n + n * n + i * n + i] = 1.0;
        }
        let mut problem = OdeProblem::new(t0, y0, rhs);
        let traj = integrate(&mut problem, t1, &[t1], method)?;
        let y = traj.last();
        phi.push(DVector::from_column_slice(&y[..n]));
        let mut v = unflatten(n, &y[n..]);
        symmetrize(&mut v);
        cov.push(v);
        transition.push(unflatten(n, &y[n + n * n..]));
        segments.push(traj);
    }

    Ok(ClaSolution {
        system_size: model.system_size,
        h,
        phi,
        cov,
        transition,
        segments,
    })
}

/// `cov(G(t_k), G(t_{k+1})) = V(t_k)·Υ(t_{k+1}, t_k)ᵀ`.
pub fn cross_cov(sol: &ClaSolution, k: usize) -> DMatrix<f64> {
    &sol.cov[k] * sol.transition[k].transpose()
}

/// Rows of the projection matrix `B` (at most two).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSpec {
    pub rows: Vec<Vec<f64>>,
}

impl ProjectionSpec {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, ClaError> {
        if rows.is_empty() || rows.len() > 2 {
            return Err(ClaError::Invalid(format!("projection needs 1 or 2 rows, got {}", rows.len())));
        }
        if rows.iter().any(|r| r.iter().all(|&c| c == 0.0)) {
            return Err(ClaError::Invalid("projection row is zero".into()));
        }
        if rows.iter().any(|r| r.len() != rows[0].len()) {
            return Err(ClaError::Invalid("projection rows differ in length".into()));
        }
        Ok(Self { rows })
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.rows[0].len();
        DMatrix::from_fn(self.rows.len(), n, |i, j| self.rows[i][j])
    }
}

/// Mean, variance and one-step cross-covariance of `Z = B·Ŷ` on the grid, in
/// normalized units.
#[derive(Debug, Clone)]
pub struct ProjectedStats {
    pub h: f64,
    pub system_size: f64,
    pub mean: Vec<DVector<f64>>,
    pub var: Vec<DMatrix<f64>>,
    /// `cov(Z(t_k), Z(t_{k+1}))`.
    pub cross: Vec<DMatrix<f64>>,
}

impl ProjectedStats {
    pub fn dim(&self) -> usize {
        self.mean[0].len()
    }

    pub fn steps(&self) -> usize {
        self.cross.len()
    }
}

pub fn project(sol: &ClaSolution, spec: &ProjectionSpec) -> Result<ProjectedStats, ClaError> {
    if spec.rows[0].len() != sol.num_species() {
        return Err(ClaError::Invalid(format!(
            "projection has {} columns but the model has {} species",
            spec.rows[0].len(),
            sol.num_species()
        )));
    }
    let b = spec.matrix();
    let bt = b.transpose();
    let inv_n = 1.0 / sol.system_size;
    let mean = sol.phi.iter().map(|p| &b * p).collect();
    let var = sol
        .cov
        .iter()
        .map(|v| {
            let mut m = (&b * v * &bt) * inv_n;
            symmetrize(&mut m);
            m
        })
        .collect();
    let cross = (0..sol.steps()).map(|k| (&b * cross_cov(sol, k) * &bt) * inv_n).collect();
    Ok(ProjectedStats {
        h: sol.h,
        system_size: sol.system_size,
        mean,
        var,
        cross,
    })
}

/// Conditional law of `Z(t_{k+1})` given `Z(t_k) = z`:
/// `N(intercept + gain·z, residual)`.
#[derive(Debug, Clone)]
pub struct GaussianKernelStep {
    pub gain: DMatrix<f64>,
    pub intercept: DVector<f64>,
    pub residual: DMatrix<f64>,
    /// Set when `var_Z(t_k)` has an eigenvalue below [`SINGULARITY_FLOOR`].
    /// Conditioning then uses the pseudo-inverse, which reduces to the
    /// marginal of `Z(t_{k+1})` when every direction is singular.
    pub degenerate: bool,
}

impl GaussianKernelStep {
    pub fn conditional_mean(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.intercept + &self.gain * z
    }
}

pub fn kernel_step(stats: &ProjectedStats, k: usize) -> Result<GaussianKernelStep, ClaError> {
    if k >= stats.steps() {
        return Err(ClaError::Invalid(format!("step {k} beyond the {} computed steps", stats.steps())));
    }
    let m = stats.dim();
    let var_k = &stats.var[k];
    let eig = var_k.clone().symmetric_eigen();
    let mut pinv = DMatrix::zeros(m, m);
    let mut degenerate = false;
    for i in 0..m {
        let l = eig.eigenvalues[i];
        if l < SINGULARITY_FLOOR {
            degenerate = true;
            continue;
        }
        let v = eig.eigenvectors.column(i);
        pinv += (v * v.transpose()) / l;
    }
    let c = &stats.cross[k];
    let gain = c.transpose() * &pinv;
    let intercept = &stats.mean[k + 1] - &gain * &stats.mean[k];
    let mut residual = &stats.var[k + 1] - &gain * c;
    symmetrize(&mut residual);
    let r_eig = residual.clone().symmetric_eigen();
    let min = r_eig.eigenvalues.min();
    if min < -RESIDUAL_TOLERANCE {
        return Err(ClaError::Inconsistent { step: k, eigenvalue: min });
    }
    if min < 0.0 {
        let clamped = r_eig.eigenvalues.map(|l| l.max(0.0));
        residual = &r_eig.eigenvectors * DMatrix::from_diagonal(&clamped) * r_eig.eigenvectors.transpose();
    }
    Ok(GaussianKernelStep {
        gain,
        intercept,
        residual,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;
    use crate::ode::Tolerances;

    pub(crate) const GENE: &str = "\
system_size: 100
species: mRNA Pro
init: mRNA=0 Pro=0
reaction:  -> mRNA            @ 0.5
reaction: mRNA -> mRNA + Pro  @ 0.0058 * mRNA
reaction: mRNA ->             @ 0.0029 * mRNA
reaction: Pro ->              @ 0.0001 * Pro
";

    fn tight() -> Method {
        Method::Adaptive(Tolerances { rtol: 1e-10, atol: 1e-13 })
    }

    #[test]
    fn starts_deterministic() {
        let m = parse_model(GENE).unwrap();
        let sol = solve_cla(&m, 10.0, 1.0, Method::default()).unwrap();
        assert_eq!(sol.cov[0], DMatrix::zeros(2, 2));
        assert_eq!(sol.steps(), 10);
        assert_eq!(cross_cov(&sol, 0), DMatrix::zeros(2, 2));
    }

    #[test]
    fn no_reactions_is_static() {
        let m = parse_model("system_size: 10\nspecies: A B\ninit: A=3 B=7\n").unwrap();
        let sol = solve_cla(&m, 5.0, 1.0, Method::default()).unwrap();
        for k in 0..=5 {
            assert_eq!(sol.phi[k].as_slice(), &[0.3, 0.7]);
            assert_eq!(sol.cov[k], DMatrix::zeros(2, 2));
        }
        for u in &sol.transition {
            assert_eq!(*u, DMatrix::identity(2, 2));
        }
    }

    #[test]
    fn mrna_moments_match_birth_death_closed_form() {
        // Birth λ, death μ·x: mean and variance both equal (λ/μ)(1 − e^{−μt}).
        let m = parse_model(GENE).unwrap();
        let sol = solve_cla(&m, 2000.0, 100.0, tight()).unwrap();
        let n = 100.0;
        for k in [1, 5, 20] {
            let t = sol.time(k);
            let exact = 0.5 / 0.0029 * (1.0 - (-0.0029 * t).exp());
            let mean = n * sol.phi[k][0];
            let var = n * sol.cov[k][(0, 0)];
            assert!((mean - exact).abs() / exact < 1e-7, "t={t}");
            assert!((var - exact).abs() / exact < 1e-7, "t={t}");
        }
        let stationary: f64 = 0.5 / 0.0029;
        assert!((stationary - 172.41379).abs() < 1e-4);
        assert!((n * sol.cov[20][(0, 0)] / stationary - 1.0).abs() < 0.01);
    }

    #[test]
    fn grid_extends_to_cover_horizon() {
        let m = parse_model(GENE).unwrap();
        let sol = solve_cla(&m, 100.0, 1.85, Method::default()).unwrap();
        assert_eq!(sol.steps(), 55);
        assert!(sol.horizon() >= 100.0);
        let (p, v) = sol.moments_at(sol.time(3)).unwrap();
        assert_eq!(p, sol.phi[3]);
        assert_eq!(v, sol.cov[3]);
        assert!(sol.moments_at(200.0).is_err());
    }

    #[test]
    fn projection_examples() {
        let m = parse_model(GENE).unwrap();
        let sol = solve_cla(&m, 50.0, 5.0, Method::default()).unwrap();
        let basis = project(&sol, &ProjectionSpec::new(vec![vec![0.0, 1.0]]).unwrap()).unwrap();
        let sum = project(&sol, &ProjectionSpec::new(vec![vec![1.0, 1.0]]).unwrap()).unwrap();
        let diff = project(&sol, &ProjectionSpec::new(vec![vec![1.0, -1.0]]).unwrap()).unwrap();
        let neg = project(&sol, &ProjectionSpec::new(vec![vec![-1.0, 1.0]]).unwrap()).unwrap();
        for k in 0..=sol.steps() {
            assert_eq!(basis.mean[k][0], sol.phi[k][1]);
            assert!((basis.var[k][(0, 0)] - sol.cov[k][(1, 1)] / 100.0).abs() < 1e-18);
            let v = &sol.cov[k];
            let expected = (v[(0, 0)] + v[(1, 1)] + 2.0 * v[(0, 1)]) / 100.0;
            assert!((sum.var[k][(0, 0)] - expected).abs() < 1e-15);
            assert_eq!(diff.mean[k][0], -neg.mean[k][0]);
            assert_eq!(diff.var[k], neg.var[k]);
        }
    }

    #[test]
    fn kernel_regresses_through_means() {
        let m = parse_model(GENE).unwrap();
        let sol = solve_cla(&m, 100.0, 1.85, Method::default()).unwrap();
        let stats = project(&sol, &ProjectionSpec::new(vec![vec![1.0, -1.0]]).unwrap()).unwrap();
        let first = kernel_step(&stats, 0).unwrap();
        assert!(first.degenerate);
        assert_eq!(first.gain, DMatrix::zeros(1, 1));
        assert_eq!(first.residual, stats.var[1]);
        for k in 1..stats.steps() {
            let ks = kernel_step(&stats, k).unwrap();
            assert!(!ks.degenerate);
            let mu = ks.conditional_mean(&stats.mean[k]);
            assert!((mu[0] - stats.mean[k + 1][0]).abs() < 1e-14);
            let total = &ks.gain * &stats.var[k] * ks.gain.transpose() + &ks.residual;
            assert!((total[(0, 0)] - stats.var[k + 1][(0, 0)]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_cross_covariance_gives_marginal() {
        let stats = ProjectedStats {
            h: 1.0,
            system_size: 1.0,
            mean: vec![DVector::from_element(1, 0.3), DVector::from_element(1, 0.8)],
            var: vec![DMatrix::from_element(1, 1, 0.2), DMatrix::from_element(1, 1, 0.5)],
            cross: vec![DMatrix::zeros(1, 1)],
        };
        let ks = kernel_step(&stats, 0).unwrap();
        assert!(!ks.degenerate);
        assert_eq!(ks.conditional_mean(&DVector::from_element(1, 5.0))[0], 0.8);
        assert_eq!(ks.residual[(0, 0)], 0.5);
    }

    #[test]
    fn inconsistent_residual_is_an_error() {
        let stats = ProjectedStats {
            h: 1.0,
            system_size: 1.0,
            mean: vec![DVector::zeros(1), DVector::zeros(1)],
            var: vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)],
            cross: vec![DMatrix::from_element(1, 1, 2.0)],
        };
        assert!(matches!(kernel_step(&stats, 0), Err(ClaError::Inconsistent { .. })));
    }

    #[test]
    fn chapman_kolmogorov_on_full_projection() {
        let m = parse_model(GENE).unwrap();
        let sol = solve_cla(&m, 60.0, 2.0, tight()).unwrap();
        let spec = ProjectionSpec::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let stats = project(&sol, &spec).unwrap();
        for k in [3, 10, 20] {
            let a = kernel_step(&stats, k).unwrap();
            let b = kernel_step(&stats, k + 1).unwrap();
            let gain2 = &b.gain * &a.gain;
            let res2 = &b.residual + &b.gain * &a.residual * b.gain.transpose();
            let c2 = (&sol.cov[k] * (&sol.transition[k + 1] * &sol.transition[k]).transpose()) / 100.0;
            let direct = ProjectedStats {
                h: 4.0,
                system_size: 100.0,
                mean: vec![stats.mean[k].clone(), stats.mean[k + 2].clone()],
                var: vec![stats.var[k].clone(), stats.var[k + 2].clone()],
                cross: vec![c2],
            };
            let d = kernel_step(&direct, 0).unwrap();
            assert!((&gain2 - &d.gain).amax() < 1e-6);
            assert!((&res2 - &d.residual).amax() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_projection() {
        assert!(ProjectionSpec::new(vec![]).is_err());
        assert!(ProjectionSpec::new(vec![vec![0.0, 0.0]]).is_err());
        assert!(ProjectionSpec::new(vec![vec![1.0]; 3]).is_err());
    }
}
