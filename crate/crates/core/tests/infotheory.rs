mod common;

use approx::assert_relative_eq;
use common::{
    Mixture1d, FROZEN_PM1_H_AT_1, FROZEN_PM1_H_AT_HALF, FROZEN_PM1_PEAK_SIGMA2, FROZEN_PM1_RATE_AT_1,
};
use difflab::infotheory::{
    active_set_norm_check, bandwidth_limit_diagnostic, conditional_entropy, conditional_entropy_sigma2,
    divergence_at_sigma2, divergence_report, entropy_profile, fisher_constant_diagnostic, fisher_spectrum,
    gaussian_conditional_entropy, gaussian_rate_per_sigma2, marginal_entropy_rate, marginal_identity_residual,
    rates_at_sigma2, RateEstimator,
};
use difflab::mc::Estimate;
use difflab::model::{DataDistribution, DeltaMixture, GaussianFull, GaussianSubspace, NoiseSchedule};
use difflab::score::score_at;
use difflab::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn mix(rows: &[&[f64]]) -> DataDistribution {
    DeltaMixture::from_rows(rows, None).unwrap().into()
}

fn pm1() -> DataDistribution {
    mix(&[&[-1.0], &[1.0]])
}

fn five_point() -> DataDistribution {
    mix(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[-1.0, -0.5], &[2.0, 2.0]])
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

const MC_ESTIMATORS: [RateEstimator; 4] = [
    RateEstimator::Norm,
    RateEstimator::Variance,
    RateEstimator::Divergence,
    RateEstimator::FiniteDifference,
];

#[test]
fn conditional_entropy_limits() {
    let s = NoiseSchedule::default();
    let hot = conditional_entropy(&pm1(), &s, 1e4, 20_000, 1).unwrap();
    assert!((hot.value - 2f64.ln()).abs() <= 1e-3);
    let cold = conditional_entropy(&pm1(), &s, 1e-4, 20_000, 1).unwrap();
    assert!(cold.value <= 1e-3);
    let simplex: Vec<DVector<f64>> = (0..6).map(|i| DVector::from_fn(6, |j, _| if i == j { 1.0 } else { 0.0 })).collect();
    let simplex: DataDistribution = DeltaMixture::uniform(simplex).unwrap().into();
    let h = conditional_entropy(&simplex, &s, 1e4, 20_000, 1).unwrap();
    assert!((h.value - 6f64.ln()).abs() <= 1e-3);
    let gauss: DataDistribution = GaussianFull::isotropic(2, 1.0).unwrap().into();
    assert!(matches!(conditional_entropy(&gauss, &s, 1.0, 10, 1), Err(Error::Unsupported(_))));
}

#[test]
fn conditional_entropy_matches_frozen_quadrature() {
    for (s2, frozen) in [(1.0, FROZEN_PM1_H_AT_1), (0.5, FROZEN_PM1_H_AT_HALF)] {
        let est = conditional_entropy_sigma2(&pm1(), s2, 200_000, 3).unwrap();
        assert!(
            (est.value - frozen).abs() <= 4.0 * est.stderr,
            "H({s2}) = {} ± {} vs {frozen}",
            est.value,
            est.stderr
        );
    }
}

#[test]
fn every_estimator_matches_the_quadrature_rate() {
    let oracle = Mixture1d::uniform(&[-1.0, 1.0]);
    for s2 in [0.1, 0.3, 1.0, 3.0] {
        let truth = if s2 == 1.0 { FROZEN_PM1_RATE_AT_1 } else { oracle.rate(s2) };
        let r = rates_at_sigma2(&pm1(), s2, 100_000, 4).unwrap();
        for e in RateEstimator::ALL {
            let est = r.get(e);
            assert!(
                (est.value - truth).abs() <= 4.0 * est.stderr,
                "{} at {s2}: {} ± {} vs {truth}",
                e.as_str(),
                est.value,
                est.stderr
            );
        }
    }
}

#[test]
fn estimators_agree_pairwise_on_mixtures() {
    for d in [pm1(), five_point()] {
        for s2 in log_grid(0.01, 100.0, 7) {
            let r = rates_at_sigma2(&d, s2, 50_000, 5).unwrap();
            for (i, a) in MC_ESTIMATORS.iter().enumerate() {
                for b in &MC_ESTIMATORS[i + 1..] {
                    let z = r.get(*a).z_distance(&r.get(*b));
                    assert!(z <= 4.0, "{} vs {} at {s2}: z = {z}", a.as_str(), b.as_str());
                }
            }
        }
    }
}

#[test]
fn gaussian_rates_are_closed_form() {
    let cov = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 2.0, 0.5, 0.0, 0.5, 1.0]);
    let g: DataDistribution = GaussianFull::new(DVector::from_vec(vec![1.0, -2.0, 0.5]), cov.clone()).unwrap().into();
    let eig = cov.symmetric_eigen().eigenvalues;
    for s2 in [0.05, 1.0, 20.0] {
        let closed: f64 = eig.iter().map(|s| 0.5 * (1.0 / s2 - 1.0 / (s + s2))).sum();
        assert_relative_eq!(gaussian_rate_per_sigma2(&g, s2).unwrap(), closed, max_relative = 1e-12);
        let h: f64 = eig
            .iter()
            .map(|s| 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * s * s2 / (s + s2)).ln())
            .sum();
        assert_relative_eq!(gaussian_conditional_entropy(&g, s2).unwrap(), h, max_relative = 1e-12);

        let r = rates_at_sigma2(&g, s2, 20_000, 6).unwrap();
        assert_relative_eq!(r.variance.value, closed, max_relative = 1e-9);
        assert_relative_eq!(r.divergence.value, closed, max_relative = 1e-9);
        assert_relative_eq!(r.fisher.value, closed, max_relative = 1e-9);
        assert_relative_eq!(r.finite_difference.value, closed, max_relative = 1e-5);
        assert!((r.norm.value - closed).abs() <= 4.0 * r.norm.stderr);
    }
}

#[test]
fn manifold_rate_limits() {
    let s = NoiseSchedule::default();
    let wide: DataDistribution = GaussianSubspace::axis_aligned(10, 3, 1e3).unwrap().into();
    let narrow: DataDistribution = GaussianSubspace::axis_aligned(10, 3, 0.7).unwrap().into();
    for s2 in log_grid(0.01, 100.0, 9) {
        let limit = 3.0 / (2.0 * s2);
        let r = rates_at_sigma2(&wide, s2, 20_000, 7).unwrap();
        for est in [r.variance, r.divergence, r.finite_difference] {
            assert!((est.value / limit - 1.0).abs() <= 0.01);
        }
        let finite = 3.0 * 0.49 / (2.0 * s2 * (s2 + 0.49));
        let r = rates_at_sigma2(&narrow, s2, 20_000, 7).unwrap();
        assert!((r.norm.value - finite).abs() <= 3.0 * r.norm.stderr + 1e-12 / s2);
        assert_relative_eq!(r.variance.value, finite, max_relative = 1e-9);
        let per_t = difflab::infotheory::entropy_rate(&narrow, &s, s2, RateEstimator::Divergence, 100, 7).unwrap();
        assert_relative_eq!(per_t.value, finite, max_relative = 1e-9);
    }
}

#[test]
fn single_point_has_zero_rate() {
    let d = mix(&[&[0.5, 2.0, -1.0]]);
    for s2 in [0.01, 1.0, 100.0] {
        let r = rates_at_sigma2(&d, s2, 20_000, 8).unwrap();
        for e in RateEstimator::ALL {
            let est = r.get(e);
            assert!(est.value.abs() <= 3.0 * est.stderr + 1e-12 / s2, "{}: {}", e.as_str(), est.value);
        }
        let div = divergence_at_sigma2(&d, s2, 1000, 8).unwrap();
        assert_relative_eq!(div.div.value, -3.0 / s2, max_relative = 1e-12);
        assert!(div.delta_div.value.abs() <= 1e-12 / s2);
    }
}

#[test]
fn conditional_entropy_grows_with_noise() {
    let grid = log_grid(0.01, 100.0, 40);
    for d in [pm1(), five_point()] {
        let p = entropy_profile(&d, &NoiseSchedule::default(), &grid, &[RateEstimator::Norm], 20_000, 9).unwrap();
        for w in p.rows.windows(2) {
            assert!(
                w[1].h_cond.value >= w[0].h_cond.value - 3.0 * w[1].h_cond.combined_stderr(&w[0].h_cond),
                "H drops between {} and {}",
                w[0].sigma2,
                w[1].sigma2
            );
        }
    }
}

#[test]
fn profile_rejects_bad_grids() {
    let s = NoiseSchedule::default();
    assert!(entropy_profile(&pm1(), &s, &[1.0, 0.5], &[RateEstimator::Norm], 10, 0).is_err());
    assert!(entropy_profile(&pm1(), &s, &[1.0], &[], 10, 0).is_err());
    assert!(rates_at_sigma2(&pm1(), 0.0, 10, 0).is_err());
    assert!(rates_at_sigma2(&pm1(), 1.0, 0, 0).is_err());
}

#[test]
fn divergence_signs_and_peak() {
    let s = NoiseSchedule::default();
    for d in [pm1(), five_point()] {
        for t in log_grid(0.01, 100.0, 9) {
            let r = divergence_report(&d, &s, t, 20_000, 10).unwrap();
            assert!(r.div.value <= 3.0 * r.div.stderr);
            assert!(r.delta_div.value >= -3.0 * r.delta_div.stderr);
            assert_relative_eq!(r.div1, -(d.dim() as f64) / t, max_relative = 1e-12);
        }
    }
    let at_one = divergence_report(&pm1(), &s, 1.0, 100_000, 11).unwrap();
    assert!(at_one.delta_div.value > 4.0 * at_one.delta_div.stderr);
    assert!((at_one.delta_div.value - 2.0 * FROZEN_PM1_RATE_AT_1).abs() <= 4.0 * at_one.delta_div.stderr);

    // Δdiv per unit σ² is twice the conditional rate, so it peaks where the
    // rate does.
    let oracle = Mixture1d::uniform(&[-1.0, 1.0]);
    let grid = log_grid(0.1, 1.0, 9);
    let best = grid
        .iter()
        .copied()
        .max_by(|a, b| oracle.rate(*a).total_cmp(&oracle.rate(*b)))
        .unwrap();
    assert!((best / FROZEN_PM1_PEAK_SIGMA2).ln().abs() <= (grid[1] / grid[0]).ln());
    for &s2 in &grid {
        let r = divergence_at_sigma2(&pm1(), s2, 50_000, 12).unwrap();
        assert!((r.delta_div.value - 2.0 * oracle.rate(s2)).abs() <= 4.0 * r.delta_div.stderr);
    }
}

#[test]
fn trace_fisher_equals_delta_div() {
    for d in [pm1(), five_point()] {
        for s2 in [0.1, 1.0, 10.0] {
            let r = rates_at_sigma2(&d, s2, 50_000, 13).unwrap();
            let div = divergence_at_sigma2(&d, s2, 50_000, 13).unwrap();
            assert!(r.trace_fisher.z_distance(&div.delta_div) <= 4.0);
        }
    }
}

#[test]
fn marginal_rate_and_identity() {
    let s = NoiseSchedule::default();
    let single = mix(&[&[1.0, 1.0]]);
    for t in [0.1, 1.0, 10.0] {
        let m = marginal_entropy_rate(&single, &s, t, 1000, 14).unwrap();
        assert_relative_eq!(m.value, 2.0 / (2.0 * t), max_relative = 1e-12);

        let h = 1.5;
        let g: DataDistribution = GaussianFull::isotropic(3, h).unwrap().into();
        let m = marginal_entropy_rate(&g, &s, t, 1000, 14).unwrap();
        let closed = 3.0 / (2.0 * (t + h * h));
        assert_relative_eq!(m.value, closed, max_relative = 1e-12);
        // d/dt of ½D log(2πe(σ² + h²)) by central difference.
        let ent = |t: f64| 1.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * (t + h * h)).ln();
        let fd = (ent(t * 1.0001) - ent(t * 0.9999)) / (2e-4 * t);
        assert_relative_eq!(m.value, fd, max_relative = 1e-6);

        let r = marginal_identity_residual(&pm1(), &s, t, 50_000, 15).unwrap();
        assert!(r.value.abs() <= 4.0 * r.stderr.max(1e-12));
    }
    let fast = NoiseSchedule::constant(2.0, 100.0).unwrap();
    let r = marginal_identity_residual(&five_point(), &fast, 0.3, 50_000, 16).unwrap();
    assert!(r.value.abs() <= 4.0 * r.stderr);
}

#[test]
fn gaussian_fisher_spectrum() {
    let s = NoiseSchedule::default();
    let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0, 9.0]));
    let g: DataDistribution = GaussianFull::new(DVector::zeros(3), cov).unwrap().into();
    for t in [0.1, 1.0, 10.0] {
        let f = fisher_spectrum(&g, &s, &DVector::from_vec(vec![0.3, -1.0, 2.0]), t).unwrap();
        for (got, si) in f.eigenvalues.iter().zip([0.5, 2.0, 9.0]) {
            assert_relative_eq!(*got, 1.0 / t - 1.0 / (si + t), max_relative = 1e-10);
        }
    }
}

#[test]
fn subspace_fisher_spectrum_counts_the_manifold() {
    let s = NoiseSchedule::default();
    let h = 1e3;
    let g: DataDistribution = GaussianSubspace::axis_aligned(10, 3, h).unwrap().into();
    let x = DVector::from_fn(10, |i, _| (i as f64 * 0.7).sin());
    for t in log_grid(0.01, 100.0, 12) {
        let f = fisher_spectrum(&g, &s, &x, t).unwrap();
        assert_eq!(f.eigenvalues.iter().filter(|v| v.abs() < 1e-8 / t).count(), 7);
        assert_eq!(f.est_manifold_dim, 3);
        for v in &f.eigenvalues[7..] {
            assert_relative_eq!(*v, 1.0 / t, max_relative = 1e-3);
        }
        // Jacobian eigenvalues off the subspace are exactly −1/σ².
        let jac = score_at(&g, &x, t).unwrap().jacobian;
        let vals = jac.symmetric_eigen().eigenvalues;
        let mut vals: Vec<f64> = vals.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        for v in &vals[..7] {
            assert!((v + 1.0 / t).abs() <= 1e-8 / t);
        }
    }
}

#[test]
fn active_set_examples() {
    let one = active_set_norm_check(1, 0.7, 3).unwrap();
    assert_relative_eq!(one.exact, 1.0 / 0.7, max_relative = 1e-12);
    let four = active_set_norm_check(4, 1.0, 8).unwrap();
    assert!((four.exact / 0.25 - 1.0).abs() <= 0.15, "{}", four.exact);
    let norms: Vec<f64> = [1, 2, 4, 8].iter().map(|&m| active_set_norm_check(m, 1.0, 8).unwrap().exact).collect();
    assert!(norms.windows(2).all(|w| w[1] < w[0]));
    assert!(matches!(active_set_norm_check(4, 1.0, 3), Err(Error::Dimension { .. })));
}

#[test]
fn factor_diagnostics() {
    let d = fisher_constant_diagnostic(&pm1(), 1.0, 100_000, 17).unwrap();
    assert_eq!(d.preferred_constant(), 0.5);
    assert!((d.ratio_half - 1.0).abs() < 0.05);
    assert!((d.ratio_quarter - 0.5).abs() < 0.05);

    let b = bandwidth_limit_diagnostic(10, 3, 1.0, 1e-3, 1e3).unwrap();
    assert!((b.ratio_large_h - 1.0).abs() < 1e-5);
    assert!(b.ratio_small_h < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fisher_matrix_is_psd(
        pts in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 1..6),
        x in prop::collection::vec(-3.0f64..3.0, 2),
        t in 0.01f64..10.0,
    ) {
        let rows: Vec<&[f64]> = pts.iter().map(|p| &p[..]).collect();
        let d = mix(&rows);
        let f = fisher_spectrum(&d, &NoiseSchedule::default(), &DVector::from_vec(x), t).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((f.matrix[i][j] - f.matrix[j][i]).abs() <= 1e-12 * (1.0 + f.matrix[i][j].abs()));
            }
        }
        prop_assert!(f.eigenvalues.iter().all(|v| *v >= -1e-8));
    }

    #[test]
    fn rates_are_non_negative(
        pts in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 2..6),
        s2 in 0.02f64..20.0,
    ) {
        let rows: Vec<&[f64]> = pts.iter().map(|p| &p[..]).collect();
        let r = rates_at_sigma2(&mix(&rows), s2, 4096, 18).unwrap();
        for e in RateEstimator::ALL {
            let est: Estimate = r.get(e);
            prop_assert!(est.value >= -3.0 * est.stderr - 1e-12 / s2, "{} = {}", e.as_str(), est.value);
        }
    }
}
