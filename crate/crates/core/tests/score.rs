mod common;

use approx::assert_relative_eq;
use difflab::model::{DataDistribution, DeltaMixture, GaussianFull, GaussianSubspace};
use difflab::score::{denoising_loss_decomposition, exact_denoiser, log_density, posterior, score_at, score_vector};
use difflab::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn mix(rows: &[&[f64]], weights: Option<&[f64]>) -> DataDistribution {
    DeltaMixture::from_rows(rows, weights).unwrap().into()
}

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

fn pm1() -> DataDistribution {
    mix(&[&[-1.0], &[1.0]], None)
}

#[test]
fn posterior_examples() {
    let p = posterior(&pm1(), &v(&[0.0]), 0.7).unwrap();
    let w = p.weights.unwrap();
    assert_relative_eq!(w[0], 0.5, epsilon = 1e-15);
    assert_relative_eq!(p.mean[0], 0.0, epsilon = 1e-15);

    let p = posterior(&pm1(), &v(&[1.0]), 1e-4).unwrap();
    assert!(p.weights.unwrap()[1] >= 1.0 - 1e-3);
    assert_relative_eq!(p.mean[0], 1.0, epsilon = 1e-6);

    let d = mix(&[&[0.0], &[3.0]], None);
    let w = posterior(&d, &v(&[1.0]), 1.0).unwrap().weights.unwrap();
    let naive = {
        let (a, b) = ((-0.5f64).exp(), (-2.0f64).exp());
        a / (a + b)
    };
    assert_relative_eq!(w[0], naive, epsilon = 1e-14);
    assert_relative_eq!(w[0], 0.817_574_476_193_643_7, epsilon = 1e-14);
}

#[test]
fn posterior_at_zero_noise() {
    assert!(matches!(posterior(&pm1(), &v(&[0.3]), 0.0), Err(Error::SingularPosterior)));
    let p = posterior(&pm1(), &v(&[1.0]), 0.0).unwrap();
    assert_eq!(p.mean[0], 1.0);
    assert_eq!(p.trace_var, 0.0);
    assert!(score_at(&pm1(), &v(&[1.0]), 0.0).is_err());
}

#[test]
fn tiny_variance_does_not_overflow() {
    let d = mix(&[&[-100.0], &[100.0], &[250.0]], None);
    let p = posterior(&d, &v(&[90.0]), 1e-6).unwrap();
    let w = p.weights.unwrap();
    assert!(w.iter().all(|w| w.is_finite()));
    assert_relative_eq!(w[1], 1.0, epsilon = 1e-12);
}

#[test]
fn score_examples() {
    let h: f64 = 1.7;
    let g: DataDistribution = GaussianFull::isotropic(3, h).unwrap().into();
    let x = v(&[0.4, -2.0, 1.1]);
    let s2 = 0.6;
    let eval = score_at(&g, &x, s2).unwrap();
    for i in 0..3 {
        assert_relative_eq!(eval.score[i], -x[i] / (s2 + h * h), epsilon = 1e-14);
        assert_relative_eq!(eval.jacobian[(i, i)], -1.0 / (s2 + h * h), epsilon = 1e-14);
    }

    let c = mix(&[&[2.0, -1.0]], None);
    let x = v(&[0.5, 0.5]);
    let eval = score_at(&c, &x, 0.25).unwrap();
    assert_relative_eq!(eval.score, (v(&[2.0, -1.0]) - &x) / 0.25, epsilon = 1e-12);
    assert_relative_eq!(eval.jacobian, DMatrix::identity(2, 2) * -4.0, epsilon = 1e-12);

    let s = score_vector(&pm1(), &v(&[0.5]), 0.5).unwrap()[0];
    assert_relative_eq!(s, (1.0f64.tanh() - 0.5) / 0.5, epsilon = 1e-14);
    assert_relative_eq!(s, 0.523_188_311_911_529_8, epsilon = 1e-14);
    let oracle = common::Mixture1d::uniform(&[-1.0, 1.0]);
    let h = 1e-5;
    let fd = ((oracle.density(0.5 + h, 0.5)).ln() - (oracle.density(0.5 - h, 0.5)).ln()) / (2.0 * h);
    assert_relative_eq!(s, fd, epsilon = 1e-8);
}

#[test]
fn gaussian_posterior_closed_form() {
    let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let g: DataDistribution = GaussianFull::new(DVector::zeros(2), cov.clone()).unwrap().into();
    let s2 = 0.8;
    let x = v(&[1.0, -0.3]);
    let inv = (&cov + DMatrix::identity(2, 2) * s2).try_inverse().unwrap();
    let p = posterior(&g, &x, s2).unwrap();
    assert_relative_eq!(p.mean, &cov * &inv * &x, epsilon = 1e-12);
    assert_relative_eq!(p.covariance, &cov * &inv * s2, epsilon = 1e-12);
    let eval = score_at(&g, &x, s2).unwrap();
    assert_relative_eq!(eval.score, -&inv * &x, epsilon = 1e-12);
    assert_relative_eq!(eval.jacobian, -inv, epsilon = 1e-12);
}

fn distributions() -> Vec<DataDistribution> {
    vec![
        pm1(),
        mix(&[&[-1.0], &[1.0]], Some(&[0.3, 0.7])),
        mix(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[-1.0, -0.5], &[2.0, 2.0]], None),
        mix(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]], Some(&[0.2, 0.3, 0.5])),
        GaussianFull::new(v(&[0.5, -1.0]), DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5])).unwrap().into(),
        GaussianSubspace::axis_aligned(4, 2, 1.5).unwrap().into(),
    ]
}

fn point(dim: usize, raw: &[f64]) -> DVector<f64> {
    DVector::from_iterator(dim, raw.iter().copied().take(dim))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn score_is_gradient_of_log_density(which in 0usize..6, raw in prop::collection::vec(-3.0f64..3.0, 4), ls2 in -1.0f64..1.0) {
        let d = &distributions()[which];
        let s2 = 10f64.powf(ls2);
        let x = point(d.dim(), &raw);
        let s = score_vector(d, &x, s2).unwrap();
        let h = 1e-5;
        for i in 0..d.dim() {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (log_density(d, &a, s2).unwrap() - log_density(d, &b, s2).unwrap()) / (2.0 * h);
            prop_assert!((fd - s[i]).abs() <= 1e-6 * (1.0 + s[i].abs()), "i={i} fd={fd} s={}", s[i]);
        }
    }

    #[test]
    fn jacobian_is_derivative_of_score(which in 0usize..6, raw in prop::collection::vec(-3.0f64..3.0, 4), ls2 in -1.0f64..1.0) {
        let d = &distributions()[which];
        let s2 = 10f64.powf(ls2);
        let x = point(d.dim(), &raw);
        let j = score_at(d, &x, s2).unwrap().jacobian;
        prop_assert!((&j - j.transpose()).amax() <= 1e-10);
        let h = 1e-5;
        for i in 0..d.dim() {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += h;
            b[i] -= h;
            let col = (score_vector(d, &a, s2).unwrap() - score_vector(d, &b, s2).unwrap()) / (2.0 * h);
            for k in 0..d.dim() {
                prop_assert!((col[k] - j[(k, i)]).abs() <= 1e-5 * (1.0 + j[(k, i)].abs()));
            }
        }
    }

    #[test]
    fn score_and_jacobian_agree_with_posterior(which in 0usize..6, raw in prop::collection::vec(-3.0f64..3.0, 4), ls2 in -1.5f64..1.5) {
        let d = &distributions()[which];
        let s2 = 10f64.powf(ls2);
        let x = point(d.dim(), &raw);
        let p = posterior(d, &x, s2).unwrap();
        let e = score_at(d, &x, s2).unwrap();
        let expect_s = (&p.mean - &x) / s2;
        prop_assert!((&e.score - &expect_s).amax() <= 1e-10 * (1.0 + expect_s.amax()));
        let n = d.dim();
        let expect_j = DMatrix::<f64>::identity(n, n) * (-1.0 / s2) + &p.covariance / (s2 * s2);
        prop_assert!((&e.jacobian - &expect_j).amax() <= 1e-8 * (1.0 + expect_j.amax()));
        if let Some(w) = &p.weights {
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(w.iter().all(|w| (0.0..=1.0).contains(w)));
        }
        prop_assert!((&p.covariance - p.covariance.transpose()).amax() <= 1e-12);
        let eig = p.covariance.clone().symmetric_eigenvalues();
        prop_assert!(eig.iter().all(|l| *l >= -1e-10));
    }

    #[test]
    fn shift_and_scale_equivariance(raw in prop::collection::vec(-2.0f64..2.0, 2), shift in prop::collection::vec(-5.0f64..5.0, 2), alpha in 0.2f64..5.0, ls2 in -1.0f64..1.0) {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, -0.5]];
        let base = mix(&pts.iter().map(|p| &p[..]).collect::<Vec<_>>(), Some(&[0.1, 0.2, 0.3, 0.4]));
        let s2 = 10f64.powf(ls2);
        let x = v(&raw);
        let s0 = score_vector(&base, &x, s2).unwrap();

        let sh = v(&shift);
        let moved: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[0] + shift[0], p[1] + shift[1]]).collect();
        let moved = mix(&moved.iter().map(|p| &p[..]).collect::<Vec<_>>(), Some(&[0.1, 0.2, 0.3, 0.4]));
        let s1 = score_vector(&moved, &(&x + &sh), s2).unwrap();
        prop_assert!((&s1 - &s0).amax() <= 1e-12 * (1.0 + s0.amax()) * 100.0);

        let scaled: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[0] * alpha, p[1] * alpha]).collect();
        let scaled = mix(&scaled.iter().map(|p| &p[..]).collect::<Vec<_>>(), Some(&[0.1, 0.2, 0.3, 0.4]));
        let s2s = score_vector(&scaled, &(&x * alpha), alpha * alpha * s2).unwrap() * alpha;
        prop_assert!((&s2s - &s0).amax() <= 1e-12 * (1.0 + s0.amax()) * 100.0);
    }
}

#[test]
fn loss_decomposition_with_exact_candidate() {
    let d = pm1();
    let r = denoising_loss_decomposition(&d, 1.0, exact_denoiser(&d), 200_000, 3).unwrap();
    assert!(r.l_sm.value <= 1e-10, "L_sm = {}", r.l_sm.value);
    assert!((r.l_d.value - r.c_t_z_units.value).abs() <= 3.0 * r.l_d.combined_stderr(&r.c_t_z_units) + 1e-12);
    let oracle = common::FROZEN_PM1_CT_AT_1;
    assert!(
        (r.c_t_z_units.value - oracle).abs() <= 3.0 * r.c_t_z_units.stderr,
        "C_t = {} ± {} vs {oracle}",
        r.c_t_z_units.value,
        r.c_t_z_units.stderr
    );
    // Posterior-variance reading: σ²·C_t = E[tr var(y|x)].
    assert!((r.expected_trace_var.value * 1.0 - oracle).abs() <= 3.0 * r.expected_trace_var.stderr);
}

#[test]
fn loss_decomposition_with_zero_candidate() {
    let d: DataDistribution = mix(&[&[0.0, 0.0], &[1.0, 2.0]], None);
    let r = denoising_loss_decomposition(&d, 0.5, |x: &DVector<f64>, _| DVector::zeros(x.len()), 200_000, 4).unwrap();
    assert!((r.l_d.value - 2.0).abs() <= 4.0 * r.l_d.stderr);
}

#[test]
fn loss_decomposition_identity_for_perturbed_candidates() {
    for (k, d) in distributions().iter().enumerate() {
        let exact = exact_denoiser(d);
        let cand = |x: &DVector<f64>, s2: f64| exact(x, s2).map(|c| c + 0.3) + x * 0.05;
        let r = denoising_loss_decomposition(d, 0.7, cand, 50_000, 10 + k as u64).unwrap();
        assert!(r.residual.value.abs() <= 4.0 * r.residual.stderr + 1e-12, "case {k}: {:?}", r.residual);
        assert!(r.l_sm.value > 0.0);
    }
}

#[test]
fn non_finite_candidate_reports_the_point() {
    let d = pm1();
    let err = denoising_loss_decomposition(&d, 1.0, |x: &DVector<f64>, _| x.map(|_| f64::NAN), 10, 1).unwrap_err();
    assert!(matches!(err, Error::NonFiniteCandidate { ref x } if x.len() == 1));
}
