//! Exact score fields and posterior statistics p(y | x_t).
//!
//! Everything here is parameterized by the noise variance σ² rather than by
//! time; use [`NoiseSchedule::sigma2`](crate::model::NoiseSchedule::sigma2)
//! to convert. For a point-mass mixture the posterior weights are
//!
//! ```text
//! w_j(x) ∝ π_j · exp(−‖x − y_j‖² / 2σ²)
//! ```
//!
//! evaluated in log space with max subtraction, so they stay finite even when
//! σ² is many orders of magnitude below ‖y_j‖². The score and its Jacobian
//! follow from the posterior moments:
//!
//! ```text
//! ∇log p_t(x)   = (E[y|x] − x) / σ²
//! ∇∇ᵀlog p_t(x) = −I/σ² + var(y|x)/σ⁴
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mc::{self, parallel_moments, Estimate};
use crate::model::{DataDistribution, DeltaMixture, ForwardSample};

/// Posterior moments of the clean datum given a noisy observation.
#[derive(Clone, Debug)]
pub struct PosteriorStats {
    /// Component responsibilities; `None` for Gaussian data.
    pub weights: Option<Vec<f64>>,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub trace_var: f64,
}

/// Score and score Jacobian at one (x, σ²).
#[derive(Clone, Debug)]
pub struct ScoreEval {
    pub x: DVector<f64>,
    pub sigma2: f64,
    pub score: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

fn check_inputs(dist: &DataDistribution, x: &DVector<f64>, sigma2: f64) -> Result<()> {
    if x.len() != dist.dim() {
        return Err(Error::Dimension {
            expected: dist.dim(),
            got: x.len(),
        });
    }
    if !(sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(Error::Domain {
            what: "sigma2",
            value: sigma2,
            domain: "[0, inf)".into(),
        });
    }
    Ok(())
}

fn require_positive(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "sigma2",
            value: sigma2,
            domain: "(0, inf)".into(),
        })
    }
}

/// Normalized log responsibilities log w_j(x) of a point-mass mixture.
pub fn mixture_log_weights(mix: &DeltaMixture, x: &DVector<f64>, sigma2: f64) -> Vec<f64> {
    let mut logits: Vec<f64> = mix
        .points()
        .iter()
        .zip(mix.log_weights())
        .map(|(y, lw)| lw - (x - y).norm_squared() / (2.0 * sigma2))
        .collect();
    let lse = log_sum_exp(&logits);
    logits.iter_mut().for_each(|l| *l -= lse);
    logits
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Posterior entropy −Σ w_j log w_j (nats) of a mixture at one x.
pub fn mixture_posterior_entropy(mix: &DeltaMixture, x: &DVector<f64>, sigma2: f64) -> f64 {
    mixture_log_weights(mix, x, sigma2)
        .iter()
        .filter(|lw| lw.is_finite())
        .map(|lw| -lw.exp() * lw)
        .sum()
}

/// Exact posterior statistics of y given x_t = x at noise variance `sigma2`.
///
/// At σ² = 0 a mixture posterior is only defined when `x` coincides with a
/// data point (it is then that point); Gaussian data require σ² > 0.
pub fn posterior(dist: &DataDistribution, x: &DVector<f64>, sigma2: f64) -> Result<PosteriorStats> {
    check_inputs(dist, x, sigma2)?;
    let d = dist.dim();
    match dist {
        DataDistribution::DeltaMixture(mix) => {
            if sigma2 == 0.0 {
                let hit = mix
                    .points()
                    .iter()
                    .position(|y| y == x)
                    .ok_or(Error::SingularPosterior)?;
                let mut weights = vec![0.0; mix.len()];
                weights[hit] = 1.0;
                return Ok(PosteriorStats {
                    weights: Some(weights),
                    mean: x.clone(),
                    covariance: DMatrix::zeros(d, d),
                    trace_var: 0.0,
                });
            }
            let weights: Vec<f64> = mixture_log_weights(mix, x, sigma2)
                .into_iter()
                .map(f64::exp)
                .collect();
            let mut mean = DVector::zeros(d);
            for (y, w) in mix.points().iter().zip(&weights) {
                mean.axpy(*w, y, 1.0);
            }
            // Centered on the posterior mean to avoid cancellation.
            let mut cov = DMatrix::zeros(d, d);
            for (y, w) in mix.points().iter().zip(&weights) {
                let c = y - &mean;
                cov.ger(*w, &c, &c, 1.0);
            }
            let cov = 0.5 * (&cov + cov.transpose());
            let trace_var = cov.trace().max(0.0);
            Ok(PosteriorStats {
                weights: Some(weights),
                mean,
                covariance: cov,
                trace_var,
            })
        }
        DataDistribution::GaussianFull(g) => {
            require_positive(sigma2)?;
            let gain = g.spectral_map(|s| s / (s + sigma2));
            let mean = g.mean() + &gain * (x - g.mean());
            let covariance = g.spectral_map(|s| sigma2 * s / (s + sigma2));
            let trace_var = covariance.trace();
            Ok(PosteriorStats {
                weights: None,
                mean,
                covariance,
                trace_var,
            })
        }
        DataDistribution::GaussianSubspace(g) => {
            require_positive(sigma2)?;
            let h2 = g.h() * g.h();
            let shrink = h2 / (h2 + sigma2);
            let mean = g.projector() * x * shrink;
            let covariance = g.projector() * (sigma2 * shrink);
            let trace_var = sigma2 * shrink * g.data_dim() as f64;
            Ok(PosteriorStats {
                weights: None,
                mean,
                covariance,
                trace_var,
            })
        }
    }
}

/// Exact score ∇log p_t(x) and Jacobian ∇∇ᵀlog p_t(x). Requires σ² > 0.
pub fn score_at(dist: &DataDistribution, x: &DVector<f64>, sigma2: f64) -> Result<ScoreEval> {
    check_inputs(dist, x, sigma2)?;
    require_positive(sigma2)?;
    let d = dist.dim();
    let (score, jacobian) = match dist {
        DataDistribution::DeltaMixture(_) => {
            let post = posterior(dist, x, sigma2)?;
            let score = (&post.mean - x) / sigma2;
            let jac = post.covariance / (sigma2 * sigma2)
                - DMatrix::<f64>::identity(d, d) / sigma2;
            (score, jac)
        }
        DataDistribution::GaussianFull(g) => {
            let precision = g.spectral_map(|s| 1.0 / (s + sigma2));
            let score = -(&precision * (x - g.mean()));
            (score, -precision)
        }
        DataDistribution::GaussianSubspace(g) => {
            let h2 = g.h() * g.h();
            let p = g.projector();
            let complement = DMatrix::<f64>::identity(d, d) - p;
            let jac = -(p / (h2 + sigma2)) - complement / sigma2;
            let jac = 0.5 * (&jac + jac.transpose());
            let score = &jac * x;
            (score, jac)
        }
    };
    Ok(ScoreEval {
        x: x.clone(),
        sigma2,
        score,
        jacobian,
    })
}

/// Score vector only. Cheaper than [`score_at`] for integrators.
pub fn score_vector(dist: &DataDistribution, x: &DVector<f64>, sigma2: f64) -> Result<DVector<f64>> {
    check_inputs(dist, x, sigma2)?;
    require_positive(sigma2)?;
    Ok(match dist {
        DataDistribution::DeltaMixture(mix) => {
            let log_w = mixture_log_weights(mix, x, sigma2);
            let mut mean = DVector::zeros(x.len());
            for (y, lw) in mix.points().iter().zip(&log_w) {
                mean.axpy(lw.exp(), y, 1.0);
            }
            (mean - x) / sigma2
        }
        DataDistribution::GaussianFull(g) => {
            -(g.spectral_map(|s| 1.0 / (s + sigma2)) * (x - g.mean()))
        }
        DataDistribution::GaussianSubspace(g) => {
            let h2 = g.h() * g.h();
            let px = g.projector() * x;
            let perp = x - &px;
            -(px / (h2 + sigma2)) - perp / sigma2
        }
    })
}

/// log p_t(x) for the noised marginal.
pub fn log_density(dist: &DataDistribution, x: &DVector<f64>, sigma2: f64) -> Result<f64> {
    check_inputs(dist, x, sigma2)?;
    require_positive(sigma2)?;
    let d = dist.dim() as f64;
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    Ok(match dist {
        DataDistribution::DeltaMixture(mix) => {
            let logits: Vec<f64> = mix
                .points()
                .iter()
                .zip(mix.log_weights())
                .map(|(y, lw)| lw - (x - y).norm_squared() / (2.0 * sigma2))
                .collect();
            log_sum_exp(&logits) - 0.5 * d * (ln_2pi + sigma2.ln())
        }
        DataDistribution::GaussianFull(g) => {
            let c = x - g.mean();
            let quad = c.dot(&(g.spectral_map(|s| 1.0 / (s + sigma2)) * &c));
            let log_det: f64 = g.cov_eigenvalues().iter().map(|s| (s + sigma2).ln()).sum();
            -0.5 * (quad + log_det + d * ln_2pi)
        }
        DataDistribution::GaussianSubspace(g) => {
            let h2 = g.h() * g.h();
            let px = g.projector() * x;
            let perp = x - &px;
            let k = g.data_dim() as f64;
            let quad = px.norm_squared() / (h2 + sigma2) + perp.norm_squared() / sigma2;
            let log_det = k * (h2 + sigma2).ln() + (d - k) * sigma2.ln();
            -0.5 * (quad + log_det + d * ln_2pi)
        }
    })
}

/// Monte Carlo terms of the denoising score-matching decomposition
/// L_d = L_sm + C_t, all in z units.
#[derive(Clone, Copy, Debug)]
pub struct LossDecomposition {
    /// E‖z − s(x)‖²
    pub l_d: Estimate,
    /// E‖E[z|x] − s(x)‖²
    pub l_sm: Estimate,
    /// E‖z − E[z|x]‖²
    pub c_t_z_units: Estimate,
    /// Paired per-sample L_d − L_sm − C_t; zero in expectation.
    pub residual: Estimate,
    /// E[tr var(y|x)] in data units, which equals σ²·C_t.
    pub expected_trace_var: Estimate,
}

/// Estimates the decomposition for a candidate denoiser s(x, σ²) that
/// predicts the noise z. The exact optimum is E[z|x] = −σ·∇log p_t(x).
pub fn denoising_loss_decomposition<F>(
    dist: &DataDistribution,
    sigma2: f64,
    candidate: F,
    n_samples: usize,
    seed: u64,
) -> Result<LossDecomposition>
where
    F: Fn(&DVector<f64>, f64) -> DVector<f64> + Sync,
{
    require_positive(sigma2)?;
    if n_samples == 0 {
        return Err(Error::invalid("n_samples", "must be >= 1"));
    }
    let sigma = sigma2.sqrt();
    let seed = mc::derive_seed(seed, &[mc::streams::LOSS]);
    let m = parallel_moments::<5, _>(n_samples, seed, |rng| {
        let s = ForwardSample::draw(dist, f64::NAN, sigma2, rng);
        let post = posterior(dist, &s.x_t, sigma2)?;
        let ez = (&s.x_t - &post.mean) / sigma;
        let pred = candidate(&s.x_t, sigma2);
        if pred.len() != s.x_t.len() || pred.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCandidate {
                x: s.x_t.iter().copied().collect(),
            });
        }
        let l_d = (&s.z - &pred).norm_squared();
        let l_sm = (&ez - &pred).norm_squared();
        let c_t = (&s.z - &ez).norm_squared();
        Ok([l_d, l_sm, c_t, l_d - l_sm - c_t, post.trace_var])
    })?;
    Ok(LossDecomposition {
        l_d: m[0].estimate(),
        l_sm: m[1].estimate(),
        c_t_z_units: m[2].estimate(),
        residual: m[3].estimate(),
        expected_trace_var: m[4].estimate(),
    })
}

/// The exact denoiser E[z|x] = −σ·∇log p_t(x), usable as a candidate.
pub fn exact_denoiser(dist: &DataDistribution) -> impl Fn(&DVector<f64>, f64) -> DVector<f64> + Sync + '_ {
    move |x, sigma2| {
        score_vector(dist, x, sigma2)
            .map(|s| s * -sigma2.sqrt())
            .unwrap_or_else(|_| DVector::from_element(x.len(), f64::NAN))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GaussianFull, GaussianSubspace};

    fn two_deltas() -> DataDistribution {
        DeltaMixture::from_rows(&[&[1.0], &[-1.0]], None).unwrap().into()
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn symmetric_point_has_even_weights() {
        for &s2 in &[0.01, 1.0, 50.0] {
            let p = posterior(&two_deltas(), &v(&[0.0]), s2).unwrap();
            let w = p.weights.unwrap();
            assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
            assert!(p.mean[0].abs() < 1e-15);
        }
    }

    #[test]
    fn concentrates_at_small_noise() {
        let p = posterior(&two_deltas(), &v(&[1.0]), 1e-4).unwrap();
        let w = p.weights.unwrap();
        assert!(w[0] >= 1.0 - 1e-3);
        assert!((p.mean[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn extreme_separation_stays_finite() {
        let p = posterior(&two_deltas(), &v(&[0.3]), 1e-9).unwrap();
        let w = p.weights.unwrap();
        assert_eq!(w[0], 1.0);
        assert!(p.mean.iter().all(|m| m.is_finite()));
    }

    #[test]
    fn zero_noise_requires_data_point() {
        assert!(matches!(
            posterior(&two_deltas(), &v(&[0.2]), 0.0),
            Err(Error::SingularPosterior)
        ));
        let p = posterior(&two_deltas(), &v(&[-1.0]), 0.0).unwrap();
        assert_eq!(p.weights.unwrap(), vec![0.0, 1.0]);
        assert!(score_at(&two_deltas(), &v(&[-1.0]), 0.0).is_err());
    }

    #[test]
    fn single_point_score() {
        let dist: DataDistribution = DeltaMixture::from_rows(&[&[2.0, -1.0]], None).unwrap().into();
        let x = v(&[0.5, 0.5]);
        let e = score_at(&dist, &x, 0.25).unwrap();
        assert!((e.score[0] - 6.0).abs() < 1e-12 && (e.score[1] + 6.0).abs() < 1e-12);
        let expected = -DMatrix::<f64>::identity(2, 2) * 4.0;
        assert!((e.jacobian - expected).abs().max() < 1e-12);
    }

    #[test]
    fn isotropic_gaussian_score() {
        let dist: DataDistribution = GaussianFull::isotropic(3, 2.0).unwrap().into();
        let x = v(&[1.0, -2.0, 0.5]);
        let e = score_at(&dist, &x, 1.5).unwrap();
        let expected = -&x / (1.5 + 4.0);
        assert!((e.score - expected).amax() < 1e-12);
    }

    #[test]
    fn subspace_jacobian_complement_is_minus_inverse_variance() {
        let dist: DataDistribution = GaussianSubspace::axis_aligned(5, 2, 10.0).unwrap().into();
        let e = score_at(&dist, &v(&[1.0, 2.0, 3.0, 4.0, 5.0]), 0.3).unwrap();
        for i in 2..5 {
            assert!((e.jacobian[(i, i)] + 1.0 / 0.3).abs() < 1e-12);
        }
        assert!((e.jacobian[(0, 0)] + 1.0 / 100.3).abs() < 1e-12);
    }

    #[test]
    fn score_vector_agrees_with_score_at() {
        let dists: Vec<DataDistribution> = vec![
            two_deltas(),
            GaussianFull::new(v(&[0.5]), DMatrix::from_element(1, 1, 2.0)).unwrap().into(),
            GaussianSubspace::axis_aligned(1, 1, 3.0).unwrap().into(),
        ];
        for d in &dists {
            let a = score_vector(d, &v(&[0.7]), 0.4).unwrap();
            let b = score_at(d, &v(&[0.7]), 0.4).unwrap().score;
            assert!((a - b).amax() < 1e-13);
        }
    }

    #[test]
    fn log_density_matches_direct_gaussian() {
        let dist: DataDistribution = GaussianFull::isotropic(2, 1.0).unwrap().into();
        let x = v(&[0.3, -0.4]);
        let lp = log_density(&dist, &x, 1.0).unwrap();
        let var: f64 = 2.0;
        let direct = -0.25 / (2.0 * var) - (2.0 * std::f64::consts::PI * var).ln();
        assert!((lp - direct).abs() < 1e-12);
    }

    #[test]
    fn rejects_wrong_dimension() {
        assert!(matches!(
            score_at(&two_deltas(), &v(&[0.0, 0.0]), 1.0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn non_finite_candidate_reported() {
        let r = denoising_loss_decomposition(
            &two_deltas(),
            1.0,
            |x, _| DVector::from_element(x.len(), f64::NAN),
            10,
            0,
        );
        assert!(matches!(r, Err(Error::NonFiniteCandidate { .. })));
    }
}
