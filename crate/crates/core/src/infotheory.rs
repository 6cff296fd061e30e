//! Conditional entropy H(y | x_t), its rate of change, and the divergence
//! and Fisher-information views of the same quantity.
//!
//! Entropies are in nats. Rates are "generative bandwidths": the rate at
//! which H(y | x_t) is destroyed as the reverse process runs, per unit time.
//! With r(σ²) = dH/dσ² the rate per unit time is ν²(t)·r(σ²). Five routes to
//! r are implemented, all using exact posterior quantities at Monte Carlo
//! samples of x_t:
//!
//! ```text
//! norm        ½ (D/σ² − E‖s‖²)
//! variance    E[tr var(y|x)] / 2σ⁴
//! divergence  ½ (E[tr J] + D/σ²)
//! fisher      c_F · E[tr 𝓘],   𝓘 = σ⁻² (I + σ² J),   c_F = ½
//! finite-diff central difference of H(y|x_t) in σ², common random numbers
//! ```

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float;
use crate::linalg::sorted_symmetric_eigen;
use crate::mc::{self, parallel_moments, Estimate};
use crate::model::{DataDistribution, DeltaMixture, ForwardSample, NoiseSchedule};
use crate::score::{mixture_posterior_entropy, posterior, score_at};

/// ln 2: nats per bit. The only place the conversion lives.
pub const NATS_PER_BIT: f64 = std::f64::consts::LN_2;

/// Constant in front of E[tr 𝓘] that makes the Fisher route agree with the
/// other estimators.
pub const FISHER_CONSTANT: f64 = 0.5;

/// Relative step Δσ²/σ² of the finite-difference estimator.
pub const FD_RELATIVE_STEP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateEstimator {
    Norm,
    Variance,
    Divergence,
    Fisher,
    FiniteDifference,
}

impl RateEstimator {
    pub const ALL: [RateEstimator; 5] = [
        RateEstimator::Norm,
        RateEstimator::Variance,
        RateEstimator::Divergence,
        RateEstimator::Fisher,
        RateEstimator::FiniteDifference,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RateEstimator::Norm => "norm",
            RateEstimator::Variance => "variance",
            RateEstimator::Divergence => "divergence",
            RateEstimator::Fisher => "fisher",
            RateEstimator::FiniteDifference => "finite-difference",
        }
    }
}

fn positive(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "sigma2",
            value: sigma2,
            domain: "(0, inf)".into(),
        })
    }
}

fn check_samples(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::invalid("n_samples", "must be >= 1"))
    } else {
        Ok(())
    }
}

fn sigma2_at(schedule: &NoiseSchedule, t: f64) -> Result<(f64, f64)> {
    let s2 = schedule.sigma2(t)?;
    positive(s2)?;
    Ok((s2, schedule.nu2(t)?))
}

/// Posterior entropy −Σ w_j log w_j at one x.
fn point_entropy(mix: &DeltaMixture, x: &DVector<f64>, sigma2: f64) -> f64 {
    mixture_posterior_entropy(mix, x, sigma2)
}

/// Differential entropy of the Gaussian posterior, in closed form.
/// For a subspace model it is the entropy on the data subspace.
pub fn gaussian_conditional_entropy(dist: &DataDistribution, sigma2: f64) -> Result<f64> {
    positive(sigma2)?;
    let c = 2.0 * PI * std::f64::consts::E;
    let term = |s: f64| 0.5 * (c * s * sigma2 / (s + sigma2)).ln();
    match dist {
        DataDistribution::GaussianFull(g) => Ok(g.cov_eigenvalues().iter().map(|&s| term(s)).sum()),
        DataDistribution::GaussianSubspace(g) => Ok(g.data_dim() as f64 * term(g.h() * g.h())),
        DataDistribution::DeltaMixture(_) => Err(Error::Unsupported(
            "closed-form conditional entropy needs Gaussian data".into(),
        )),
    }
}

/// Closed-form dH/dσ² for Gaussian data: ½ Σ_i (1/σ² − 1/(s_i + σ²)).
pub fn gaussian_rate_per_sigma2(dist: &DataDistribution, sigma2: f64) -> Result<f64> {
    positive(sigma2)?;
    let term = |s: f64| 0.5 * (1.0 / sigma2 - 1.0 / (s + sigma2));
    match dist {
        DataDistribution::GaussianFull(g) => Ok(g.cov_eigenvalues().iter().map(|&s| term(s)).sum()),
        DataDistribution::GaussianSubspace(g) => Ok(g.data_dim() as f64 * term(g.h() * g.h())),
        DataDistribution::DeltaMixture(_) => Err(Error::Unsupported(
            "closed-form rate needs Gaussian data".into(),
        )),
    }
}

/// H(y | x_t) for a point-mass mixture, by Monte Carlo over x_t of the exact
/// per-point posterior entropy.
pub fn conditional_entropy(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    t: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Estimate> {
    let (s2, _) = sigma2_at(schedule, t)?;
    conditional_entropy_sigma2(dist, s2, n_samples, seed)
}

pub fn conditional_entropy_sigma2(dist: &DataDistribution, sigma2: f64, n_samples: usize, seed: u64) -> Result<Estimate> {
    positive(sigma2)?;
    check_samples(n_samples)?;
    let mix = dist.as_mixture().ok_or_else(|| {
        Error::Unsupported("Monte Carlo conditional entropy needs a point-mass mixture".into())
    })?;
    let seed = mc::derive_seed(seed, &[mc::streams::ENTROPY]);
    let [m] = parallel_moments::<1, _>(n_samples, seed, |rng| {
        let s = ForwardSample::draw(dist, f64::NAN, sigma2, rng);
        Ok([point_entropy(mix, &s.x_t, sigma2)])
    })?;
    Ok(m.estimate())
}

/// All rate estimators at one σ², from a single set of samples, in nats per
/// unit σ² (multiply by ν² for nats per unit time).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RateSet {
    pub sigma2: f64,
    pub h_cond: Estimate,
    pub norm: Estimate,
    pub variance: Estimate,
    pub divergence: Estimate,
    pub fisher: Estimate,
    pub finite_difference: Estimate,
    /// E[tr 𝓘] (equals Δdiv).
    pub trace_fisher: Estimate,
}

impl RateSet {
    pub fn get(&self, e: RateEstimator) -> Estimate {
        match e {
            RateEstimator::Norm => self.norm,
            RateEstimator::Variance => self.variance,
            RateEstimator::Divergence => self.divergence,
            RateEstimator::Fisher => self.fisher,
            RateEstimator::FiniteDifference => self.finite_difference,
        }
    }

    fn scaled(mut self, nu2: f64) -> Self {
        for e in [
            &mut self.norm,
            &mut self.variance,
            &mut self.divergence,
            &mut self.fisher,
            &mut self.finite_difference,
        ] {
            *e = e.scaled(nu2);
        }
        self
    }
}

/// Evaluates every estimator at `sigma2` from one stream of (y, z) draws.
pub fn rates_at_sigma2(dist: &DataDistribution, sigma2: f64, n_samples: usize, seed: u64) -> Result<RateSet> {
    positive(sigma2)?;
    check_samples(n_samples)?;
    let d = dist.dim() as f64;
    let step = FD_RELATIVE_STEP * sigma2;
    let (s_lo, s_hi) = (sigma2 - step, sigma2 + step);
    let eye = DMatrix::<f64>::identity(dist.dim(), dist.dim());
    let mix = dist.as_mixture();
    let stream = mc::derive_seed(seed, &[mc::streams::ENTROPY]);

    let m = parallel_moments::<6, _>(n_samples, stream, |rng| {
        let s = ForwardSample::draw(dist, f64::NAN, sigma2, rng);
        let eval = score_at(dist, &s.x_t, sigma2)?;
        let post = posterior(dist, &s.x_t, sigma2)?;
        let fisher = (&eye + &eval.jacobian * sigma2) / sigma2;
        let (h, fd) = match mix {
            Some(mix) => {
                let x_lo = &s.y + &s.z * s_lo.sqrt();
                let x_hi = &s.y + &s.z * s_hi.sqrt();
                let fd = (point_entropy(mix, &x_hi, s_hi) - point_entropy(mix, &x_lo, s_lo)) / (2.0 * step);
                (point_entropy(mix, &s.x_t, sigma2), fd)
            }
            None => (0.0, 0.0),
        };
        Ok([
            h,
            0.5 * (d / sigma2 - eval.score.norm_squared()),
            post.trace_var / (2.0 * sigma2 * sigma2),
            0.5 * (eval.jacobian.trace() + d / sigma2),
            fd,
            fisher.trace(),
        ])
    })?;

    let (h_cond, fd) = if mix.is_some() {
        (m[0].estimate(), m[4].estimate())
    } else {
        let fd = (gaussian_conditional_entropy(dist, s_hi)? - gaussian_conditional_entropy(dist, s_lo)?) / (2.0 * step);
        (
            Estimate::exact(gaussian_conditional_entropy(dist, sigma2)?),
            Estimate::exact(fd),
        )
    };
    let trace_fisher = m[5].estimate();
    Ok(RateSet {
        sigma2,
        h_cond,
        norm: m[1].estimate(),
        variance: m[2].estimate(),
        divergence: m[3].estimate(),
        fisher: trace_fisher.scaled(FISHER_CONSTANT),
        finite_difference: fd,
        trace_fisher,
    })
}

/// Entropy rate −dH(y|x_t)/d(reverse time), in nats per unit time.
pub fn entropy_rate(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    t: f64,
    estimator: RateEstimator,
    n_samples: usize,
    seed: u64,
) -> Result<Estimate> {
    let (s2, nu2) = sigma2_at(schedule, t)?;
    Ok(rates_at_sigma2(dist, s2, n_samples, seed)?.get(estimator).scaled(nu2))
}

#[derive(Clone, Debug, Serialize)]
pub struct ProfileRow {
    pub sigma2: f64,
    pub t: f64,
    pub h_cond: Estimate,
    /// Per unit time; `None` when the estimator was not requested.
    pub rates: [Option<Estimate>; 5],
}

impl ProfileRow {
    pub fn rate(&self, e: RateEstimator) -> Option<Estimate> {
        self.rates[RateEstimator::ALL.iter().position(|x| *x == e).unwrap()]
    }
}

/// Conditional entropy and entropy rates over an increasing σ² grid.
#[derive(Clone, Debug, Serialize)]
pub struct EntropyProfile {
    pub estimators: Vec<RateEstimator>,
    pub rows: Vec<ProfileRow>,
}

/// Every grid point reuses the same (y, z) draws, so the profile is smooth
/// in σ² and differences between grid points are not swamped by noise.
pub fn entropy_profile(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    sigma2_grid: &[f64],
    estimators: &[RateEstimator],
    n_samples: usize,
    seed: u64,
) -> Result<EntropyProfile> {
    if estimators.is_empty() {
        return Err(Error::invalid("estimators", "at least one estimator is required"));
    }
    if sigma2_grid.is_empty() || sigma2_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("sigma2_grid", "must be non-empty and strictly increasing"));
    }
    let rows = sigma2_grid
        .iter()
        .map(|&s2| {
            let t = schedule.time_of(s2)?;
            let nu2 = schedule.nu2(t)?;
            let set = rates_at_sigma2(dist, s2, n_samples, seed)?.scaled(nu2);
            let mut rates = [None; 5];
            for (slot, e) in rates.iter_mut().zip(RateEstimator::ALL) {
                if estimators.contains(&e) {
                    *slot = Some(set.get(e));
                }
            }
            Ok(ProfileRow {
                sigma2: s2,
                t,
                h_cond: set.h_cond,
                rates,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EntropyProfile {
        estimators: estimators.to_vec(),
        rows,
    })
}

impl EntropyProfile {
    pub const CSV_HEADER: [&'static str; 13] = [
        "sigma2",
        "H_cond",
        "rate_norm",
        "rate_var",
        "rate_div",
        "rate_fisher",
        "rate_fd",
        "stderr_H_cond",
        "stderr_norm",
        "stderr_var",
        "stderr_div",
        "stderr_fisher",
        "stderr_fd",
    ];

    /// Writes the profile; columns of estimators that were not requested
    /// are left empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for r in &self.rows {
            let mut rec = vec![float(r.sigma2), float(r.h_cond.value)];
            rec.extend(r.rates.iter().map(|e| e.map(|e| float(e.value)).unwrap_or_default()));
            rec.push(float(r.h_cond.stderr));
            rec.extend(r.rates.iter().map(|e| e.map(|e| float(e.stderr)).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Grid σ² at which the given estimator peaks.
    pub fn peak_sigma2(&self, e: RateEstimator) -> Option<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.rate(e).map(|v| (r.sigma2, v.value)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(s, _)| s)
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DivergenceReport {
    pub t: f64,
    pub sigma2: f64,
    /// E[∇·s(x_t)]
    pub div: Estimate,
    /// −D/σ², the data-independent part.
    pub div1: f64,
    /// div − div1
    pub delta_div: Estimate,
}

pub fn divergence_report(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    t: f64,
    n_samples: usize,
    seed: u64,
) -> Result<DivergenceReport> {
    let (s2, _) = sigma2_at(schedule, t)?;
    let mut r = divergence_at_sigma2(dist, s2, n_samples, seed)?;
    r.t = t;
    Ok(r)
}

pub fn divergence_at_sigma2(dist: &DataDistribution, sigma2: f64, n_samples: usize, seed: u64) -> Result<DivergenceReport> {
    positive(sigma2)?;
    check_samples(n_samples)?;
    let stream = mc::derive_seed(seed, &[mc::streams::DIVERGENCE]);
    let [m] = parallel_moments::<1, _>(n_samples, stream, |rng| {
        let s = ForwardSample::draw(dist, f64::NAN, sigma2, rng);
        Ok([score_at(dist, &s.x_t, sigma2)?.jacobian.trace()])
    })?;
    let div = m.estimate();
    let div1 = -(dist.dim() as f64) / sigma2;
    Ok(DivergenceReport {
        t: sigma2,
        sigma2,
        div,
        div1,
        delta_div: Estimate {
            value: div.value - div1,
            stderr: div.stderr,
        },
    })
}

/// Rate of change of the marginal entropy H[x_t]: −ν²/2 · div.
pub fn marginal_entropy_rate(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    t: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Estimate> {
    let (_, nu2) = sigma2_at(schedule, t)?;
    Ok(divergence_report(dist, schedule, t, n_samples, seed)?
        .div
        .scaled(-0.5 * nu2))
}

/// Paired Monte Carlo residual of Ḣ[x_t] − Dν²/2σ² + Ḣ(y|x_t), with the
/// marginal rate from the divergence and the conditional rate from the
/// score norm. Zero in expectation.
pub fn marginal_identity_residual(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    t: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Estimate> {
    let (s2, nu2) = sigma2_at(schedule, t)?;
    check_samples(n_samples)?;
    let d = dist.dim() as f64;
    let stream = mc::derive_seed(seed, &[mc::streams::DIVERGENCE]);
    let [m] = parallel_moments::<1, _>(n_samples, stream, |rng| {
        let s = ForwardSample::draw(dist, f64::NAN, s2, rng);
        let eval = score_at(dist, &s.x_t, s2)?;
        let marginal = -0.5 * nu2 * eval.jacobian.trace();
        let conditional = 0.5 * nu2 * (d / s2 - eval.score.norm_squared());
        Ok([marginal - d * nu2 / (2.0 * s2) + conditional])
    })?;
    Ok(m.estimate())
}

#[derive(Clone, Copy, Debug)]
pub struct FisherBand {
    pub lo: f64,
    pub hi: f64,
}

impl Default for FisherBand {
    fn default() -> Self {
        FisherBand { lo: 0.5, hi: 1.5 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FisherSpectrum {
    pub t: f64,
    pub sigma2: f64,
    pub x: Vec<f64>,
    /// Row-major D×D.
    pub matrix: Vec<Vec<f64>>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvalues inside [lo·σ⁻², hi·σ⁻²].
    pub est_manifold_dim: usize,
}

/// Fisher information 𝓘_t(x) = σ⁻²(I + σ²J(x)) of the posterior with
/// respect to x, and an intrinsic-dimension estimate from its spectrum.
pub fn fisher_spectrum(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    x: &DVector<f64>,
    t: f64,
) -> Result<FisherSpectrum> {
    fisher_spectrum_with(dist, schedule, x, t, FisherBand::default())
}

pub fn fisher_spectrum_with(
    dist: &DataDistribution,
    schedule: &NoiseSchedule,
    x: &DVector<f64>,
    t: f64,
    band: FisherBand,
) -> Result<FisherSpectrum> {
    let (s2, _) = sigma2_at(schedule, t)?;
    let d = dist.dim();
    let jac = score_at(dist, x, s2)?.jacobian;
    let m = (DMatrix::<f64>::identity(d, d) + jac * s2) / s2;
    let m = 0.5 * (&m + m.transpose());
    let (vals, _) = sorted_symmetric_eigen(&m)?;
    let (lo, hi) = (band.lo / s2, band.hi / s2);
    Ok(FisherSpectrum {
        t,
        sigma2: s2,
        x: x.iter().copied().collect(),
        matrix: m.row_iter().map(|r| r.iter().copied().collect()).collect(),
        est_manifold_dim: vals.iter().filter(|v| **v >= lo && **v <= hi).count(),
        eigenvalues: vals.iter().copied().collect(),
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ActiveSetCheck {
    pub m: usize,
    pub sigma2: f64,
    /// ‖∇log p_t‖² at the probe.
    pub exact: f64,
    /// 1/(σ² m)
    pub predicted: f64,
}

/// Places m points at mutually orthogonal offsets of length σ from a probe
/// at the origin and compares the squared score norm there with 1/(σ²m).
pub fn active_set_norm_check(m: usize, sigma2: f64, dim: usize) -> Result<ActiveSetCheck> {
    positive(sigma2)?;
    if m == 0 {
        return Err(Error::invalid("m", "must be >= 1"));
    }
    if dim < m {
        return Err(Error::Dimension { expected: m, got: dim });
    }
    let sigma = sigma2.sqrt();
    let points = (0..m)
        .map(|i| {
            let mut y = DVector::zeros(dim);
            y[i] = sigma;
            y
        })
        .collect();
    let dist: DataDistribution = DeltaMixture::uniform(points)?.into();
    let s = crate::score::score_vector(&dist, &DVector::zeros(dim), sigma2)?;
    Ok(ActiveSetCheck {
        m,
        sigma2,
        exact: s.norm_squared(),
        predicted: 1.0 / (sigma2 * m as f64),
    })
}

/// Which constant in front of E[tr 𝓘] reproduces the finite-difference rate.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct FisherConstantDiagnostic {
    pub sigma2: f64,
    pub trace_fisher: Estimate,
    pub finite_difference: Estimate,
    /// ½·E[tr 𝓘] / fd
    pub ratio_half: f64,
    /// ¼·E[tr 𝓘] / fd
    pub ratio_quarter: f64,
}

impl FisherConstantDiagnostic {
    /// The constant whose ratio is closer to 1.
    pub fn preferred_constant(&self) -> f64 {
        if (self.ratio_half - 1.0).abs() <= (self.ratio_quarter - 1.0).abs() {
            0.5
        } else {
            0.25
        }
    }
}

pub fn fisher_constant_diagnostic(
    dist: &DataDistribution,
    sigma2: f64,
    n_samples: usize,
    seed: u64,
) -> Result<FisherConstantDiagnostic> {
    let r = rates_at_sigma2(dist, sigma2, n_samples, seed)?;
    let fd = r.finite_difference.value;
    Ok(FisherConstantDiagnostic {
        sigma2,
        trace_fisher: r.trace_fisher,
        finite_difference: r.finite_difference,
        ratio_half: 0.5 * r.trace_fisher.value / fd,
        ratio_quarter: 0.25 * r.trace_fisher.value / fd,
    })
}

/// Closed-form entropy rate of the subspace Gaussian, relative to the
/// maximal value D_data/2σ², in the small- and large-bandwidth limits.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BandwidthLimitDiagnostic {
    pub sigma2: f64,
    pub h_small: f64,
    pub h_large: f64,
    pub ratio_small_h: f64,
    pub ratio_large_h: f64,
}

pub fn bandwidth_limit_diagnostic(
    dim: usize,
    data_dim: usize,
    sigma2: f64,
    h_small: f64,
    h_large: f64,
) -> Result<BandwidthLimitDiagnostic> {
    use crate::model::GaussianSubspace;
    let max = data_dim as f64 / (2.0 * sigma2);
    let rate = |h: f64| -> Result<f64> {
        let g: DataDistribution = GaussianSubspace::axis_aligned(dim, data_dim, h)?.into();
        gaussian_rate_per_sigma2(&g, sigma2)
    };
    Ok(BandwidthLimitDiagnostic {
        sigma2,
        h_small,
        h_large,
        ratio_small_h: rate(h_small)? / max,
        ratio_large_h: rate(h_large)? / max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianFull;

    fn pm1() -> DataDistribution {
        DeltaMixture::from_rows(&[&[1.0], &[-1.0]], None).unwrap().into()
    }

    #[test]
    fn entropy_limits() {
        let d = pm1();
        let hi = conditional_entropy_sigma2(&d, 1e4, 20_000, 1).unwrap();
        assert!((hi.value - 2f64.ln()).abs() < 1e-3);
        let lo = conditional_entropy_sigma2(&d, 1e-4, 20_000, 1).unwrap();
        assert!(lo.value <= 1e-3);
    }

    #[test]
    fn gaussian_entropy_unsupported_by_mc() {
        let g: DataDistribution = GaussianFull::isotropic(2, 1.0).unwrap().into();
        assert!(matches!(
            conditional_entropy_sigma2(&g, 1.0, 10, 0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn active_set_exact() {
        let c = active_set_norm_check(1, 0.7, 3).unwrap();
        assert!((c.exact - 1.0 / 0.7).abs() < 1e-12);
        assert!(matches!(active_set_norm_check(4, 1.0, 3), Err(Error::Dimension { .. })));
    }

    #[test]
    fn empty_estimators_rejected() {
        assert!(entropy_profile(&pm1(), &NoiseSchedule::default(), &[1.0], &[], 100, 0).is_err());
    }

    #[test]
    fn single_point_divergence_is_trivial() {
        let d: DataDistribution = DeltaMixture::from_rows(&[&[0.3, 0.1]], None).unwrap().into();
        let r = divergence_at_sigma2(&d, 0.4, 500, 3).unwrap();
        assert!((r.div.value + 2.0 / 0.4).abs() < 1e-12);
        assert!(r.delta_div.value.abs() < 1e-12);
    }
}
