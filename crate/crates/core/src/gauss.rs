//! Univariate and bivariate normal probabilities and Gauss–Hermite rules.
//!
//! Two independent routes compute bivariate rectangle probabilities:
//! [`bvn_upper`] follows Genz's BVNU algorithm (Drezner–Wesolowsky with
//! Gauss–Legendre nodes) and is used on hot paths, while
//! [`bivariate_rect_prob`] integrates the conditional 1-D CDF with adaptive
//! Gauss–Kronrod quadrature.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, Matrix2, Vector2};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaussError {
    #[error("covariance is not positive semi-definite (min eigenvalue {0:e})")]
    NotPsd(f64),
}

/// Standard normal CDF.
pub fn gaussian_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

pub fn gaussian_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `P(lo ≤ X < hi)` for `X ~ N(mean, sd²)`. With `sd = 0` the law is a point
/// mass at `mean`.
pub fn interval_prob(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    if sd <= 0.0 {
        return if lo <= mean && mean < hi { 1.0 } else { 0.0 };
    }
    let u = (lo - mean) / sd;
    let v = (hi - mean) / sd;
    if u > 0.0 {
        gaussian_cdf(-u) - gaussian_cdf(-v)
    } else {
        gaussian_cdf(v) - gaussian_cdf(u)
    }
}

const GL6: ([f64; 3], [f64; 3]) = (
    [0.1713244923791705, 0.3607615730481384, 0.4679139345726904],
    [0.9324695142031522, 0.6612093864662647, 0.2386191860831970],
);
const GL12: ([f64; 6], [f64; 6]) = (
    [
        0.04717533638651177,
        0.1069393259953183,
        0.1600783285433464,
        0.2031674267230659,
        0.2334925365383547,
        0.2491470458134029,
    ],
    [
        0.9815606342467191,
        0.9041172563704750,
        0.7699026741943050,
        0.5873179542866171,
        0.3678314989981802,
        0.1252334085114692,
    ],
);
const GL20: ([f64; 10], [f64; 10]) = (
    [
        0.01761400713915212,
        0.04060142980038694,
        0.06267204833410906,
        0.08327674157670475,
        0.1019301198172404,
        0.1181945319615184,
        0.1316886384491766,
        0.1420961093183821,
        0.1491729864726037,
        0.1527533871307259,
    ],
    [
        0.9931285991850949,
        0.9639719272779138,
        0.9122344282513259,
        0.8391169718222188,
        0.7463319064601508,
        0.6360536807265150,
        0.5108670019508271,
        0.3737060887154196,
        0.2277858511416451,
        0.07652652113349733,
    ],
);

/// `P(X > h, Y > k)` for a standard bivariate normal with correlation `r`.
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    let r = r.clamp(-1.0, 1.0);
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY { 1.0 } else { gaussian_cdf(-k) };
    }
    if k == f64::NEG_INFINITY {
        return gaussian_cdf(-h);
    }
    if r == 0.0 {
        return gaussian_cdf(-h) * gaussian_cdf(-k);
    }
    let tp = 2.0 * PI;
    let (w, x): (&[f64], &[f64]) = if r.abs() < 0.3 {
        (&GL6.0, &GL6.1)
    } else if r.abs() < 0.75 {
        (&GL12.0, &GL12.1)
    } else {
        (&GL20.0, &GL20.1)
    };
    let nodes = || {
        w.iter()
            .zip(x)
            .flat_map(|(&wi, &xi)| [(wi, 1.0 - xi), (wi, 1.0 + xi)])
    };
    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin() / 2.0;
        for (wi, xi) in nodes() {
            let sn = (asr * xi).sin();
            bvn += wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        bvn = bvn * asr / tp + gaussian_cdf(-h) * gaussian_cdf(-k);
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let a_s = 1.0 - r * r;
            let mut a = a_s.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 80.0;
            let asr = -(bs / a_s + hk) / 2.0;
            if asr > -100.0 {
                bvn = a * asr.exp() * (1.0 - c * (bs - a_s) * (1.0 - d * bs) / 3.0 + c * d * a_s * a_s);
            }
            if hk > -100.0 {
                let b = bs.sqrt();
                let sp = tp.sqrt() * gaussian_cdf(-b / a);
                bvn -= (-hk / 2.0).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
            }
            a /= 2.0;
            let mut sum = 0.0;
            for (wi, xi) in nodes() {
                let xs = (a * xi) * (a * xi);
                let asr = -(bs / xs + hk) / 2.0;
                if asr > -100.0 {
                    let sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
                    let rs = (1.0 - xs).sqrt();
                    let ep = (-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))).exp() / rs;
                    sum += wi * asr.exp() * (sp - ep);
                }
            }
            bvn = (a * sum - bvn) / tp;
        }
        if r > 0.0 {
            bvn += gaussian_cdf(-h.max(k));
        } else if h >= k {
            bvn = -bvn;
        } else {
            let l = if h < 0.0 {
                gaussian_cdf(k) - gaussian_cdf(h)
            } else {
                gaussian_cdf(-h) - gaussian_cdf(-k)
            };
            bvn = l - bvn;
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// `P(X ≤ x, Y ≤ y)` for a standard bivariate normal with correlation `r`.
pub fn bvn_cdf(x: f64, y: f64, r: f64) -> f64 {
    bvn_upper(-x, -y, r)
}

/// A per-axis interval `[lo, hi]`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const FULL: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x < self.hi
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }
}

/// `P(Z ∈ rect)` for `Z ~ N(mean, cov)` in two dimensions, by adaptive
/// quadrature of the conditional CDF of the second axis along the first.
pub fn bivariate_rect_prob(mean: Vector2<f64>, cov: Matrix2<f64>, rect: [Interval; 2]) -> Result<f64, GaussError> {
    let (v1, v2, c) = (cov[(0, 0)], cov[(1, 1)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]));
    let min_eig = 0.5 * (v1 + v2) - (0.25 * (v1 - v2).powi(2) + c * c).sqrt();
    if v1 < -1e-9 || v2 < -1e-9 || min_eig < -1e-9 {
        return Err(GaussError::NotPsd(min_eig));
    }
    if rect[0].is_empty() || rect[1].is_empty() {
        return Ok(0.0);
    }
    let (s1, s2) = (v1.max(0.0).sqrt(), v2.max(0.0).sqrt());
    if s1 == 0.0 {
        let p = if rect[0].contains(mean[0]) { 1.0 } else { 0.0 };
        return Ok(p * interval_prob(mean[1], s2, rect[1].lo, rect[1].hi));
    }
    if s2 == 0.0 {
        let p = if rect[1].contains(mean[1]) { 1.0 } else { 0.0 };
        return Ok(p * interval_prob(mean[0], s1, rect[0].lo, rect[0].hi));
    }
    let rho = (c / (s1 * s2)).clamp(-1.0, 1.0);
    let ua = ((rect[0].lo - mean[0]) / s1).max(-CUT);
    let ub = ((rect[0].hi - mean[0]) / s1).min(CUT);
    if ub <= ua {
        return Ok(0.0);
    }
    let a2 = (rect[1].lo - mean[1]) / s2;
    let b2 = (rect[1].hi - mean[1]) / s2;
    let cond_sd = (1.0 - rho * rho).max(0.0).sqrt();
    if cond_sd < 1e-12 {
        // Y = ρ·u exactly; integrate φ over the u-range where ρ·u ∈ (a2, b2).
        let (lo, hi) = if rho > 0.0 { (a2 / rho, b2 / rho) } else { (b2 / rho, a2 / rho) };
        let (lo, hi) = (lo.max(ua), hi.min(ub));
        return Ok(if hi > lo { interval_prob(0.0, 1.0, lo, hi) } else { 0.0 });
    }
    let f = |u: f64| gaussian_pdf(u) * interval_prob(rho * u, cond_sd, a2, b2);
    Ok(adaptive_gk(&f, ua, ub, 1e-13).clamp(0.0, 1.0))
}

/// Standardized truncation of the outer quadrature; the neglected mass is
/// below 1e-18.
const CUT: f64 = 9.0;

const GK_X: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const GK_WK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const GK_WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = GK_WK[7] * fc;
    let mut g = GK_WG[3] * fc;
    for i in 0..7 {
        let x = h * GK_X[i];
        let s = f(c - x) + f(c + x);
        k += GK_WK[i] * s;
        if i % 2 == 1 {
            g += GK_WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod (7, 15) integration with absolute tolerance `tol`.
pub fn adaptive_gk(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, whole: (f64, f64), depth: u32) -> f64 {
        let (v, e) = whole;
        if e <= tol || depth == 0 || (b - a) < 1e-12 {
            return v;
        }
        let m = 0.5 * (a + b);
        let l = gk15(f, a, m);
        let r = gk15(f, m, b);
        rec(f, a, m, 0.5 * tol, l, depth - 1) + rec(f, m, b, 0.5 * tol, r, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    rec(f, a, b, tol, gk15(f, a, b), 40)
}

/// Probabilists' Gauss–Hermite rule: `Σ w_i g(x_i) ≈ E[g(X)]` for
/// `X ~ N(0,1)`. Weights sum to one.
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    // Golub–Welsch on the Jacobi matrix of the probabilists' polynomials.
    let mut jm = DMatrix::<f64>::zeros(order, order);
    for i in 1..order {
        let b = (i as f64).sqrt();
        jm[(i, i - 1)] = b;
        jm[(i - 1, i)] = b;
    }
    let eig = jm.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(x, w)| (x, w / total)).unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_values() {
        assert_eq!(gaussian_cdf(0.0), 0.5);
        assert_eq!(gaussian_cdf(f64::NEG_INFINITY), 0.0);
        assert_eq!(gaussian_cdf(f64::INFINITY), 1.0);
        // Series oracle: Φ(x) = 1/2 + φ(x)·Σ x^{2n+1}/(1·3·…·(2n+1))
        let x: f64 = 1.96;
        let mut term = x;
        let mut sum = x;
        for n in 1..200 {
            term *= x * x / (2 * n + 1) as f64;
            sum += term;
        }
        let oracle = 0.5 + gaussian_pdf(x) * sum;
        assert!((gaussian_cdf(x) - oracle).abs() < 1e-13);
        assert!((gaussian_cdf(x) - 0.9750021).abs() < 1e-7);
    }

    #[test]
    fn interval_prob_tails_are_accurate() {
        let p = interval_prob(0.0, 1.0, 10.0, 11.0);
        let oracle = 0.5 * (libm::erfc(10.0 / SQRT_2) - libm::erfc(11.0 / SQRT_2));
        assert!((p - oracle).abs() < 1e-30);
        assert_eq!(interval_prob(2.0, 0.0, 1.0, 3.0), 1.0);
        assert_eq!(interval_prob(2.0, 0.0, 2.5, 3.0), 0.0);
    }

    #[test]
    fn quadrant_probability() {
        // 1/4 + asin(ρ)/(2π)
        let expected = 0.25 + 0.5f64.asin() / (2.0 * PI);
        assert!((expected - 1.0 / 3.0).abs() < 1e-15);
        let cov = Matrix2::new(1.0, 0.5, 0.5, 1.0);
        let rect = [Interval::new(0.0, f64::INFINITY); 2];
        let q = bivariate_rect_prob(Vector2::zeros(), cov, rect).unwrap();
        assert!((q - 1.0 / 3.0).abs() < 1e-8);
        assert!((bvn_upper(0.0, 0.0, 0.5) - 1.0 / 3.0).abs() < 1e-14);
        for r in [-0.99, -0.95, -0.8, -0.3, 0.1, 0.6, 0.93, 0.999] {
            let expected = 0.25 + f64::asin(r) / (2.0 * PI);
            assert!((bvn_upper(0.0, 0.0, r) - expected).abs() < 1e-14, "r={r}");
        }
    }

    #[test]
    fn independence_factorizes() {
        let cov = Matrix2::new(2.0, 0.0, 0.0, 0.5);
        let rect = [Interval::new(-1.0, 0.7), Interval::new(0.2, 3.0)];
        let q = bivariate_rect_prob(Vector2::new(0.1, 0.4), cov, rect).unwrap();
        let e = interval_prob(0.1, 2f64.sqrt(), -1.0, 0.7) * interval_prob(0.4, 0.5f64.sqrt(), 0.2, 3.0);
        assert!((q - e).abs() < 1e-10);
    }

    #[test]
    fn full_plane_and_bad_covariance() {
        let cov = Matrix2::new(1.0, 0.9, 0.9, 1.0);
        let q = bivariate_rect_prob(Vector2::new(3.0, -2.0), cov, [Interval::FULL; 2]).unwrap();
        assert!((q - 1.0).abs() < 1e-12);
        let bad = Matrix2::new(1.0, 2.0, 2.0, 1.0);
        assert!(bivariate_rect_prob(Vector2::zeros(), bad, [Interval::FULL; 2]).is_err());
    }

    #[test]
    fn degenerate_axes() {
        let cov = Matrix2::new(0.0, 0.0, 0.0, 1.0);
        let rect = [Interval::new(-1.0, 1.0), Interval::new(0.0, f64::INFINITY)];
        assert!((bivariate_rect_prob(Vector2::zeros(), cov, rect).unwrap() - 0.5).abs() < 1e-15);
        let perfect = Matrix2::new(1.0, 1.0, 1.0, 1.0);
        let rect = [Interval::new(0.0, f64::INFINITY), Interval::new(f64::NEG_INFINITY, 1.0)];
        let q = bivariate_rect_prob(Vector2::zeros(), perfect, rect).unwrap();
        assert!((q - (gaussian_cdf(1.0) - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn gauss_hermite_moments() {
        let (x, w) = gauss_hermite(64);
        let m = |p: i32| x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(p)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-13);
        assert!(m(1).abs() < 1e-12);
        assert!((m(2) - 1.0).abs() < 1e-11);
        assert!((m(4) - 3.0).abs() < 1e-10);
        assert!((m(6) - 15.0).abs() < 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn rect_by_bvn(mean: Vector2<f64>, s: (f64, f64), r: f64, rect: [Interval; 2]) -> f64 {
            let std = |v: f64, m: f64, sd: f64| (v - m) / sd;
            let (x0, x1) = (std(rect[0].lo, mean[0], s.0), std(rect[0].hi, mean[0], s.0));
            let (y0, y1) = (std(rect[1].lo, mean[1], s.1), std(rect[1].hi, mean[1], s.1));
            bvn_upper(x0, y0, r) - bvn_upper(x1, y0, r) - bvn_upper(x0, y1, r) + bvn_upper(x1, y1, r)
        }

        proptest! {
            #[test]
            fn genz_and_quadrature_agree(
                m0 in -2.0f64..2.0, m1 in -2.0f64..2.0,
                s0 in 0.1f64..3.0, s1 in 0.1f64..3.0,
                r in -0.999f64..0.999,
                a in -4.0f64..4.0, wa in 0.01f64..5.0,
                b in -4.0f64..4.0, wb in 0.01f64..5.0,
            ) {
                let mean = Vector2::new(m0, m1);
                let cov = Matrix2::new(s0 * s0, r * s0 * s1, r * s0 * s1, s1 * s1);
                let rect = [Interval::new(a, a + wa), Interval::new(b, b + wb)];
                let q = bivariate_rect_prob(mean, cov, rect).unwrap();
                let g = rect_by_bvn(mean, (s0, s1), r, rect);
                prop_assert!((q - g).abs() < 1e-10, "quad {q} genz {g}");
            }

            #[test]
            fn bvn_symmetries(h in -5.0f64..5.0, k in -5.0f64..5.0, r in -1.0f64..1.0) {
                let p = bvn_upper(h, k, r);
                prop_assert!((0.0..=1.0).contains(&p));
                prop_assert!((p - bvn_upper(k, h, r)).abs() < 1e-14);
                // P(X>h, Y>k) + P(X>h, Y≤k) = P(X>h)
                let q = bvn_upper(h, f64::NEG_INFINITY, r) - bvn_upper(h, k, r);
                let alt = bvn_upper(h, -k, -r);
                prop_assert!((q - alt).abs() < 1e-13, "{q} vs {alt}");
            }
        }
    }
}
