use super::*;
use crate::design::DesignMatrix;
use crate::solvers::{default_lambda_grid, fit_weighted_lasso, lambda_max_logistic};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_design(n: usize, p_cov: usize, seed: u64) -> DesignMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cov = Array2::from_shape_fn((n, p_cov), |_| rng.gen_range(-1.2..1.2));
    DesignMatrix::with_intercept(&cov).unwrap()
}

#[test]
fn constant_weights_reduce_to_plain_lasso() {
    let x = random_design(30, 5, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h: Vec<f64> = (0..30).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let c = 2.5;
    let wc = ObservationWeights::new(ndarray::Array1::from_elem(30, c)).unwrap();
    let lambda = 0.12;
    // Weights c at lambda solve the same problem as unit weights at lambda/c.
    let fit_c =
        estimate_outcome_nuisance(&x, &h, &wc, lambda, None, EffectParameter::scalar(0.0))
            .unwrap();
    let unit = ObservationWeights::unit(30);
    let fit_u = fit_weighted_lasso(&x, &h, &unit, lambda / c).unwrap();
    for j in 0..x.p() {
        assert!(
            (fit_c.beta_hat[j] - fit_u.coefficients[j]).abs() < 1e-7,
            "column {j}: {} vs {}",
            fit_c.beta_hat[j],
            fit_u.coefficients[j]
        );
    }
}

#[test]
fn realizable_target_has_small_gap_and_residuals() {
    let x = random_design(40, 4, 3);
    let beta_star = [0.5, 1.0, -0.8, 0.0, 0.3];
    let h: Vec<f64> = {
        let eta = x.linear_predictor(&beta_star);
        eta.to_vec()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = ObservationWeights::new(ndarray::Array1::from_shape_fn(40, |_| {
        rng.gen_range(0.05..0.25)
    }))
    .unwrap();
    let lambda = 1e-4;
    let fit =
        estimate_outcome_nuisance(&x, &h, &w, lambda, None, EffectParameter::scalar(0.0)).unwrap();
    assert!(fit.bias_gap <= lambda * (1.0 + 1e-6));
    let resid_max = h
        .iter()
        .zip(fit.m_hat.iter())
        .map(|(&hi, &mi)| (hi - mi).abs())
        .fold(0.0, f64::max);
    assert!(resid_max < 1e-2, "max residual {resid_max}");
}

#[test]
fn bias_gap_certificate_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..40 {
        let n = rng.gen_range(20..80);
        let p_cov = rng.gen_range(3..20);
        let x = random_design(n, p_cov, 100 + trial);
        let h: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let w = ObservationWeights::new(ndarray::Array1::from_shape_fn(n, |_| {
            rng.gen_range(0.01..0.25)
        }))
        .unwrap();
        let lambda = rng.gen_range(0.005..0.4);
        let fit = estimate_outcome_nuisance(&x, &h, &w, lambda, None, EffectParameter::scalar(0.0))
            .unwrap();
        assert!(
            fit.bias_gap <= lambda * (1.0 + 1e-6),
            "trial {trial}: gap {} vs lambda {lambda}",
            fit.bias_gap
        );
    }
}

#[test]
fn bias_gap_matches_independent_recomputation() {
    let x = random_design(25, 6, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h: Vec<f64> = (0..25).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let w = ObservationWeights::new(ndarray::Array1::from_shape_fn(25, |_| {
        rng.gen_range(0.05..0.25)
    }))
    .unwrap();
    let fit =
        estimate_outcome_nuisance(&x, &h, &w, 0.08, None, EffectParameter::scalar(0.0)).unwrap();

    // Straight-line recomputation of the certificate.
    let mut expected = 0.0_f64;
    for j in 1..x.p() {
        let col = x.column_slice(j);
        let mut g = 0.0;
        for i in 0..25 {
            g += w.as_slice()[i] * (h[i] - fit.m_hat[i]) * col[i];
        }
        expected = expected.max((g / 25.0).abs());
    }
    assert!((fit.bias_gap - expected).abs() < 1e-10);
}

#[test]
fn beta_depends_on_exposure_only_through_h_and_weights() {
    // Two exposure vectors that produce the same H and weights must give
    // bit-identical outcome fits: the fit takes only (L, H, w).
    let x = random_design(30, 5, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = ObservationWeights::new(ndarray::Array1::from_shape_fn(30, |_| {
        rng.gen_range(0.1..0.25)
    }))
    .unwrap();
    let f1 =
        estimate_outcome_nuisance(&x, &h, &w, 0.05, None, EffectParameter::scalar(0.1)).unwrap();
    let f2 =
        estimate_outcome_nuisance(&x, &h, &w, 0.05, None, EffectParameter::scalar(0.1)).unwrap();
    for j in 0..x.p() {
        assert_eq!(f1.beta_hat[j].to_bits(), f2.beta_hat[j].to_bits());
    }
}

#[test]
fn zero_modifier_pins_zero_fit() {
    let x = random_design(20, 4, 10);
    let h = vec![1.0; 20];
    let w = ObservationWeights::unit(20);
    let z = vec![0.0; 20];
    let fit = estimate_outcome_nuisance(&x, &h, &w, 0.1, Some(&z), EffectParameter::scalar(0.0))
        .unwrap();
    assert!(fit.beta_hat.iter().all(|&b| b == 0.0));
    assert_eq!(fit.bias_gap, 0.0);
}

#[test]
fn negative_effective_weights_are_rejected() {
    let x = random_design(20, 4, 11);
    let h = vec![1.0; 20];
    let w = ObservationWeights::unit(20);
    let mut z = vec![1.0; 20];
    z[3] = -0.5;
    let err = estimate_outcome_nuisance(&x, &h, &w, 0.1, Some(&z), EffectParameter::scalar(0.0))
        .unwrap_err();
    assert!(matches!(err, NuisanceError::NegativeEffectiveWeights));
}

#[test]
fn propensity_null_signal_needs_no_bumps() {
    let x = random_design(200, 8, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a: Vec<f64> = (0..200).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let lmax = lambda_max_logistic(&x, &a).max(1e-10);
    let cv = CvSpec::new(5, default_lambda_grid(lmax, 40, 1e-3), 14);
    let fit = estimate_propensity(&x, &a, &cv, &PropensityOptions::default()).unwrap();
    assert_eq!(fit.bumped, 0);
    assert!(fit.refit_support.len() <= 4, "support {:?}", fit.refit_support);
    assert!(fit.pi_hat.iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn propensity_is_deterministic() {
    let x = random_design(80, 6, 15);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let a: Vec<f64> = (0..80)
        .map(|i| {
            let lin = 0.8 * x.column_slice(1)[i] - 0.5 * x.column_slice(2)[i];
            if rng.gen_bool(1.0 / (1.0 + (-lin as f64).exp())) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let lmax = lambda_max_logistic(&x, &a).max(1e-10);
    let cv = CvSpec::new(5, default_lambda_grid(lmax, 30, 1e-3), 17);
    let f1 = estimate_propensity(&x, &a, &cv, &PropensityOptions::default()).unwrap();
    let f2 = estimate_propensity(&x, &a, &cv, &PropensityOptions::default()).unwrap();
    assert_eq!(f1.lambda_gamma, f2.lambda_gamma);
    assert_eq!(f1.bumped, f2.bumped);
    for j in 0..x.p() {
        assert_eq!(f1.gamma_hat[j].to_bits(), f2.gamma_hat[j].to_bits());
    }
}

#[test]
fn select_lambda_beta_single_grid() {
    let x = random_design(30, 4, 18);
    let h = vec![0.5; 30];
    let w = ObservationWeights::unit(30);
    let cv = CvSpec::new(5, vec![0.2], 19);
    assert_eq!(select_lambda_beta(&x, &h, &w, &cv).unwrap(), 0.2);
}

#[test]
fn noise_only_outcome_selects_nearly_empty_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cov = Array2::from_shape_fn((120, 10), |_| rng.gen_range(-1.2..1.2));
    let x = DesignMatrix::with_intercept(&cov).unwrap();
    let h: Vec<f64> = (0..120).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = ObservationWeights::new(ndarray::Array1::from_shape_fn(120, |_| {
        rng.gen_range(0.2..0.25)
    }))
    .unwrap();
    let lmax = crate::solvers::lambda_max_gaussian(&x, &h, &w).max(1e-10);
    let cv = CvSpec::new(5, default_lambda_grid(lmax, 50, 1e-3), 1000);
    let lambda = select_lambda_beta(&x, &h, &w, &cv).unwrap();
    let fit = estimate_outcome_nuisance(&x, &h, &w, lambda, None, EffectParameter::scalar(0.0))
        .unwrap();
    let active_penalized = fit.fit.active_set.iter().filter(|&&j| j != 0).count();
    assert!(active_penalized <= 2, "selected {active_penalized} covariates on noise");
}
