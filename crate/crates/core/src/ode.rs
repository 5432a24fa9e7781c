//! Explicit Runge–Kutta integration with dense output.
//!
//! The adaptive solver is the Dormand–Prince 5(4) pair with first-same-as-last
//! stages. Accepted steps are stored together with their derivatives so the
//! returned [`Trajectory`] can be evaluated anywhere by cubic Hermite
//! interpolation.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("right-hand side failed at t = {t}: {message}")]
    Rhs { t: f64, message: String },
    #[error("invalid integration request: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Dormand–Prince 5(4) with adaptive step control.
    Adaptive(Tolerances),
    /// Classical RK4 with a fixed step (shortened to hit output times).
    FixedRk4 { step: f64 },
}

impl Default for Method {
    fn default() -> Self {
        Method::Adaptive(Tolerances::default())
    }
}

/// Right-hand side `dy/dt = f(t, y)` written into the output slice.
pub type Rhs<'a> = dyn FnMut(f64, &[f64], &mut [f64]) -> Result<(), String> + 'a;

pub struct OdeProblem<'a> {
    pub t0: f64,
    pub y0: Vec<f64>,
    pub rhs: Box<Rhs<'a>>,
}

impl<'a> OdeProblem<'a> {
    pub fn new(
        t0: f64,
        y0: Vec<f64>,
        rhs: impl FnMut(f64, &[f64], &mut [f64]) -> Result<(), String> + 'a,
    ) -> Self {
        Self {
            t0,
            y0,
            rhs: Box::new(rhs),
        }
    }

    pub fn dimension(&self) -> usize {
        self.y0.len()
    }

    fn eval(&mut self, t: f64, y: &[f64], out: &mut [f64]) -> Result<(), OdeError> {
        (self.rhs)(t, y, out).map_err(|message| OdeError::Rhs { t, message })?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite { t });
        }
        Ok(())
    }
}

/// Accepted solver steps with cubic Hermite dense output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn last(&self) -> &[f64] {
        self.values.last().expect("trajectory is never empty")
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("trajectory is never empty")
    }

    /// Value at `t`, exact at stored grid points. `t` is clamped to the
    /// integrated interval.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        match self.times.binary_search_by(|p| p.total_cmp(&t)) {
            Ok(i) => self.values[i].clone(),
            Err(0) => self.values[0].clone(),
            Err(i) if i >= self.times.len() => self.last().to_vec(),
            Err(i) => {
                let (t0, t1) = (self.times[i - 1], self.times[i]);
                let dt = t1 - t0;
                let s = (t - t0) / dt;
                let h10 = s * (1.0 - s) * (1.0 - s);
                let h01 = s * s * (3.0 - 2.0 * s);
                let h11 = s * s * (s - 1.0);
                let (y0, y1) = (&self.values[i - 1], &self.values[i]);
                let (f0, f1) = (&self.slopes[i - 1], &self.slopes[i]);
                (0..y0.len())
                    .map(|j| y0[j] + h01 * (y1[j] - y0[j]) + dt * (h10 * f0[j] + h11 * f1[j]))
                    .collect()
            }
        }
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `problem` from `t0` to `t_end`. Every time in `output_times`
/// becomes an exact grid point of the returned trajectory.
pub fn integrate(
    problem: &mut OdeProblem<'_>,
    t_end: f64,
    output_times: &[f64],
    method: Method,
) -> Result<Trajectory, OdeError> {
    let t0 = problem.t0;
    if !(t_end >= t0) {
        return Err(OdeError::Invalid(format!("t_end {t_end} precedes t0 {t0}")));
    }
    if output_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(OdeError::Invalid("output times must be sorted".into()));
    }
    if output_times.iter().any(|&t| t < t0 || t > t_end) {
        return Err(OdeError::Invalid("output time outside the integration interval".into()));
    }
    let mut stops: Vec<f64> = output_times.iter().copied().filter(|&t| t > t0).collect();
    if stops.last() != Some(&t_end) && t_end > t0 {
        stops.push(t_end);
    }
    stops.dedup();

    let n = problem.dimension();
    let mut f0 = vec![0.0; n];
    problem.eval(t0, &problem.y0.clone(), &mut f0)?;
    let mut traj = Trajectory {
        times: vec![t0],
        values: vec![problem.y0.clone()],
        slopes: vec![f0],
    };
    match method {
        Method::Adaptive(tol) => dopri(problem, &stops, tol, &mut traj)?,
        Method::FixedRk4 { step } => {
            if !(step > 0.0) {
                return Err(OdeError::Invalid("RK4 step must be positive".into()));
            }
            rk4(problem, &stops, step, &mut traj)?
        }
    }
    Ok(traj)
}

fn error_norm(y: &[f64], y_new: &[f64], err: &[f64], tol: Tolerances) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..y.len() {
        let scale = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
        worst = worst.max((err[i] / scale).abs());
    }
    worst
}

fn initial_step(problem: &mut OdeProblem<'_>, t: f64, y: &[f64], f: &[f64], tol: Tolerances, span: f64) -> Result<f64, OdeError> {
    let n = y.len();
    let scale: Vec<f64> = y.iter().map(|v| tol.atol + tol.rtol * v.abs()).collect();
    let rms = |v: &[f64]| (v.iter().zip(&scale).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
    let d0 = rms(y);
    let d1 = rms(f);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y.iter().zip(f).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; n];
    problem.eval(t + h0, &y1, &mut f1)?;
    let diff: Vec<f64> = f1.iter().zip(f).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    Ok((100.0 * h0).min(h1).min(span))
}

fn dopri(problem: &mut OdeProblem<'_>, stops: &[f64], tol: Tolerances, traj: &mut Trajectory) -> Result<(), OdeError> {
    let n = problem.dimension();
    let mut t = problem.t0;
    let mut y = problem.y0.clone();
    let mut k1 = traj.slopes[0].clone();
    let span = stops.last().map_or(0.0, |&e| e - t);
    if span <= 0.0 {
        return Ok(());
    }
    let mut h = initial_step(problem, t, &y, &k1, tol, span)?;
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];

    for &stop in stops {
        while t < stop {
            let remaining = stop - t;
            let mut step = h.min(remaining);
            let lands = step >= remaining * (1.0 - 1e-12);
            if lands {
                step = remaining;
            }
            if step <= 1e-14 * t.abs().max(1.0) {
                return Err(OdeError::StepUnderflow { t });
            }
            for i in 0..n {
                stage[i] = y[i] + step * A21 * k1[i];
            }
            problem.eval(t + C2 * step, &stage, &mut k2)?;
            for i in 0..n {
                stage[i] = y[i] + step * (A31 * k1[i] + A32 * k2[i]);
            }
            problem.eval(t + C3 * step, &stage, &mut k3)?;
            for i in 0..n {
                stage[i] = y[i] + step * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            problem.eval(t + C4 * step, &stage, &mut k4)?;
            for i in 0..n {
                stage[i] = y[i] + step * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            problem.eval(t + C5 * step, &stage, &mut k5)?;
            for i in 0..n {
                stage[i] = y[i] + step * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            let t_new = if lands { stop } else { t + step };
            problem.eval(t + step, &stage, &mut k6)?;
            for i in 0..n {
                y_new[i] = y[i] + step * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
            }
            problem.eval(t_new, &y_new, &mut k7)?;
            for i in 0..n {
                err[i] = step * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            }
            let e = error_norm(&y, &y_new, &err, tol);
            if !e.is_finite() {
                h = step * 0.1;
                continue;
            }
            if e <= 1.0 {
                t = t_new;
                std::mem::swap(&mut y, &mut y_new);
                std::mem::swap(&mut k1, &mut k7);
                traj.times.push(t);
                traj.values.push(y.clone());
                traj.slopes.push(k1.clone());
                let factor = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
                // A step shortened to land on a stop says nothing about the
                // natural step size, so keep the previous proposal.
                h = if lands && step < h { h.max(step * factor) } else { step * factor };
            } else {
                h = step * (0.9 * e.powf(-0.2)).clamp(0.1, 1.0);
            }
        }
    }
    Ok(())
}

fn rk4(problem: &mut OdeProblem<'_>, stops: &[f64], h: f64, traj: &mut Trajectory) -> Result<(), OdeError> {
    let n = problem.dimension();
    let mut t = problem.t0;
    let mut y = problem.y0.clone();
    let mut k1 = traj.slopes[0].clone();
    let (mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut stage = vec![0.0; n];
    for &stop in stops {
        while t < stop {
            let remaining = stop - t;
            let lands = h >= remaining * (1.0 - 1e-12);
            let step = if lands { remaining } else { h };
            for i in 0..n {
                stage[i] = y[i] + 0.5 * step * k1[i];
            }
            problem.eval(t + 0.5 * step, &stage, &mut k2)?;
            for i in 0..n {
                stage[i] = y[i] + 0.5 * step * k2[i];
            }
            problem.eval(t + 0.5 * step, &stage, &mut k3)?;
            for i in 0..n {
                stage[i] = y[i] + step * k3[i];
            }
            problem.eval(t + step, &stage, &mut k4)?;
            for i in 0..n {
                y[i] += step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            t = if lands { stop } else { t + step };
            problem.eval(t, &y, &mut k1)?;
            traj.times.push(t);
            traj.values.push(y.clone());
            traj.slopes.push(k1.clone());
        }
    }
    Ok(())
}
