//! Independent numerical oracles shared by the integration tests.
//!
//! Nothing here calls into the library. Values marked frozen were computed
//! once with 30-digit arbitrary-precision quadrature and are pinned so a
//! regression in either the oracle or the library shows up.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};

/// H(y|x_t) for equal masses at ±1, σ² = 1, nats.
pub const FROZEN_PM1_H_AT_1: f64 = 0.356_316_360_213_113_7;
/// H(y|x_t) for ±1 at σ² = 0.5.
pub const FROZEN_PM1_H_AT_HALF: f64 = 0.193_075_044_493_100_37;
/// dH/dσ² for ±1 at σ² = 1.
pub const FROZEN_PM1_RATE_AT_1: f64 = 0.224_799_754_603_336_4;
/// Location and height of the maximum of dH/dσ² for ±1.
pub const FROZEN_PM1_PEAK_SIGMA2: f64 = 0.298_626_184_981_034_4;
pub const FROZEN_PM1_PEAK_RATE: f64 = 0.565_243_012_446_527_5;
/// Positive root of x = tanh(2x).
pub const FROZEN_TANH_ROOT_HALF: f64 = 0.957_504_024_077_268_7;
/// E‖z − E[z|x]‖² for ±1 at σ² = 1.
pub const FROZEN_PM1_CT_AT_1: f64 = 0.449_599_509_206_672_8;

/// Adaptive Simpson quadrature on [a, b].
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol.max(4.0 * f64::EPSILON * whole.abs()) {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 30)
}

/// Simpson over consecutive breakpoints.
pub fn simpson_pieces<F: Fn(f64) -> f64>(f: &F, breaks: &[f64], tol: f64) -> f64 {
    breaks.windows(2).map(|w| simpson(f, w[0], w[1], tol)).sum()
}

/// Probabilists' Gauss–Hermite rule by Golub–Welsch: Σ wᵢ f(xᵢ) ≈ E f(Z),
/// Z ~ N(0, 1). Weights sum to one.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jac[(k, k - 1)] = b;
        jac[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Root of a sign-changing function on [lo, hi].
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut flo = f(lo);
    assert!(flo * f(hi) <= 0.0, "bracket does not change sign");
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// One-dimensional mixture of point masses, evaluated directly (no log-space
/// tricks) for moderate σ².
pub struct Mixture1d {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Mixture1d {
    pub fn uniform(points: &[f64]) -> Self {
        let w = 1.0 / points.len() as f64;
        Mixture1d {
            points: points.to_vec(),
            weights: vec![w; points.len()],
        }
    }

    pub fn density(&self, x: f64, s2: f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * normal_pdf(x, *p, s2))
            .sum()
    }

    pub fn posterior(&self, x: f64, s2: f64) -> Vec<f64> {
        let raw: Vec<f64> = self
            .points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * normal_pdf(x, *p, s2))
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|r| r / total).collect()
    }

    pub fn score(&self, x: f64, s2: f64) -> f64 {
        let post = self.posterior(x, s2);
        let mean: f64 = post.iter().zip(&self.points).map(|(w, p)| w * p).sum();
        (mean - x) / s2
    }

    fn breaks(&self, s2: f64) -> Vec<f64> {
        let lo = self.points.iter().copied().fold(f64::INFINITY, f64::min) - 14.0 * s2.sqrt();
        let hi = self.points.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 14.0 * s2.sqrt();
        let mut b = vec![lo];
        let mut inner: Vec<f64> = self.points.clone();
        inner.sort_by(f64::total_cmp);
        b.extend(inner);
        b.push(hi);
        b
    }

    /// E f(x_t) by quadrature over the marginal density.
    pub fn expect<F: Fn(f64) -> f64>(&self, s2: f64, f: F) -> f64 {
        simpson_pieces(&|x| self.density(x, s2) * f(x), &self.breaks(s2), 1e-13)
    }

    pub fn cond_entropy(&self, s2: f64) -> f64 {
        self.expect(s2, |x| {
            -self
                .posterior(x, s2)
                .iter()
                .filter(|w| **w > 0.0)
                .map(|w| w * w.ln())
                .sum::<f64>()
        })
    }

    /// dH/dσ² = ½(1/σ² − E s²).
    pub fn rate(&self, s2: f64) -> f64 {
        0.5 * (1.0 / s2 - self.expect(s2, |x| self.score(x, s2).powi(2)))
    }

    /// E[var(y|x_t)].
    pub fn expected_posterior_var(&self, s2: f64) -> f64 {
        self.expect(s2, |x| {
            let post = self.posterior(x, s2);
            let m: f64 = post.iter().zip(&self.points).map(|(w, p)| w * p).sum();
            post.iter().zip(&self.points).map(|(w, p)| w * (p - m).powi(2)).sum()
        })
    }
}

/// Binomial two-sided z bound used by empirical-fraction checks.
pub fn binomial_halfwidth(p: f64, n: usize, z: f64) -> f64 {
    z * (p * (1.0 - p) / n as f64).sqrt()
}
