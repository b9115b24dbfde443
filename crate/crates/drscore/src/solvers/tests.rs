use super::*;
use crate::design::{DesignMatrix, ObservationWeights};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_design(n: usize, p_cov: usize, seed: u64) -> DesignMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cov = Array2::from_shape_fn((n, p_cov), |_| rng.gen_range(-1.5..1.5));
    DesignMatrix::with_intercept(&cov).unwrap()
}

fn random_response(x: &DesignMatrix, beta: &[f64], noise: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eta = x.linear_predictor(beta);
    eta.iter().map(|&e| e + noise * rng.gen_range(-1.0..1.0)).collect()
}

fn weighted_mean(y: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    y.iter().zip(w).map(|(&yi, &wi)| yi * wi).sum::<f64>() / sw
}

#[test]
fn dominating_penalty_gives_intercept_only_fit() {
    let x = random_design(25, 4, 1);
    let w = ObservationWeights::new(Array1::from_shape_fn(25, |i| 0.2 + (i % 5) as f64 * 0.3))
        .unwrap();
    let y = random_response(&x, &[0.5, 1.0, -2.0, 0.0, 0.7], 0.3, 2);
    let lmax = lambda_max_gaussian(&x, &y, &w);
    let fit = fit_weighted_lasso(&x, &y, &w, lmax * 1.0001).unwrap();
    assert!(fit.converged);
    for j in 1..x.p() {
        assert_eq!(fit.coefficients[j], 0.0, "column {j} should be zeroed");
    }
    let ybar = weighted_mean(&y, w.as_slice());
    assert!((fit.coefficients[0] - ybar).abs() < 1e-10);
}

#[test]
fn zero_penalty_matches_ols() {
    let x = random_design(20, 3, 3);
    let w = ObservationWeights::unit(20);
    let y = random_response(&x, &[0.3, -1.0, 0.5, 2.0], 0.5, 4);
    let opts = FitOptions { tol_coef: 1e-13, tol_kkt: 1e-11, ..FitOptions::default() };
    let fit = fit_weighted_lasso_with(&x, &y, &w, 0.0, &opts).unwrap();
    let ols = refit_unpenalized(&x, &y, Family::Gaussian, &(0..x.p()).collect::<Vec<_>>()).unwrap();
    for j in 0..x.p() {
        assert!(
            (fit.coefficients[j] - ols[j]).abs() < 1e-8,
            "coefficient {j}: cd {} vs ols {}",
            fit.coefficients[j],
            ols[j]
        );
    }
}

#[test]
fn logistic_dominating_penalty_gives_null_model() {
    let x = random_design(40, 3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a: Vec<f64> = (0..40).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect();
    let lmax = lambda_max_logistic(&x, &a);
    let fit = fit_lasso_logistic(&x, &a, lmax * 1.001).unwrap();
    for j in 1..x.p() {
        assert_eq!(fit.coefficients[j], 0.0);
    }
    let a_bar = a.iter().sum::<f64>() / 40.0;
    let expected = (a_bar / (1.0 - a_bar)).ln();
    assert!((fit.coefficients[0] - expected).abs() < 1e-6);
}

#[test]
fn logistic_symmetric_column_stays_zero() {
    // Duplicate each row with the second covariate negated (response and
    // the other covariate unchanged): the problem is invariant under
    // flipping that coefficient's sign, its KKT gradient is 0 at gamma = 0,
    // and it stays out of the model for any positive penalty.
    let base = [(0.4, 0.9, 1.0), (-0.2, -0.3, 0.0), (1.1, 0.2, 1.0), (-0.8, 0.5, 0.0)];
    let mut rows = Vec::new();
    let mut a = Vec::new();
    for &(x1, x2, ai) in &base {
        rows.push([x1, x2]);
        a.push(ai);
        rows.push([x1, -x2]);
        a.push(ai);
    }
    let cov = Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]);
    let x = DesignMatrix::with_intercept(&cov).unwrap();
    let fit = fit_lasso_logistic(&x, &a, 0.05).unwrap();
    assert_eq!(fit.coefficients[2], 0.0);
}

#[test]
fn cv_single_lambda_grid_returns_it() {
    let x = random_design(30, 4, 7);
    let y = random_response(&x, &[0.1, 0.4, 0.0, -0.2, 0.0], 0.4, 8);
    let spec = CvSpec::new(5, vec![0.07], 99);
    let res = cross_validate(&x, &y, Family::Gaussian, None, &spec).unwrap();
    assert_eq!(res.lambda, 0.07);
}

#[test]
fn cv_pure_noise_selects_sparse_model() {
    let x = random_design(60, 10, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let y: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = ObservationWeights::unit(60);
    let lmax = lambda_max_gaussian(&x, &y, &w);
    let spec = CvSpec::new(5, default_lambda_grid(lmax, 60, 1e-3), 11);
    let res = cross_validate(&x, &y, Family::Gaussian, None, &spec).unwrap();
    let fit = fit_weighted_lasso(&x, &y, &w, res.lambda).unwrap();
    let active_penalized = fit.active_set.iter().filter(|&&j| j != 0).count();
    assert!(active_penalized <= 2, "noise fit selected {active_penalized} covariates");
}

#[test]
fn refit_intercept_only_is_mean_or_logit_mean() {
    let x = random_design(25, 3, 12);
    let y = random_response(&x, &[1.0, 0.2, -0.4, 0.0], 0.2, 13);
    let b = refit_unpenalized(&x, &y, Family::Gaussian, &[0]).unwrap();
    let mean = y.iter().sum::<f64>() / 25.0;
    assert!((b[0] - mean).abs() < 1e-10);
    assert!(b.iter().skip(1).all(|&v| v == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let a: Vec<f64> = (0..25).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect();
    let g = refit_unpenalized(&x, &a, Family::Logistic, &[0]).unwrap();
    let a_bar = a.iter().sum::<f64>() / 25.0;
    assert!((g[0] - (a_bar / (1.0 - a_bar)).ln()).abs() < 1e-7);
}

#[test]
fn refit_requires_valid_support() {
    let x = random_design(10, 3, 15);
    let y = random_response(&x, &[0.0, 1.0, 0.0, 0.0], 0.1, 16);
    assert!(matches!(
        refit_unpenalized(&x, &y, Family::Gaussian, &[1, 2]),
        Err(SolverError::BadSupport { .. })
    ));
    let too_big: Vec<usize> = (0..4).collect();
    let tiny = random_design(3, 3, 17);
    let ytiny = vec![0.1, 0.2, 0.3];
    assert!(matches!(
        refit_unpenalized(&tiny, &ytiny, Family::Gaussian, &too_big),
        Err(SolverError::BadSupport { .. })
    ));
}

#[test]
fn refit_detects_singular_design() {
    // Two identical covariate columns.
    let mut cov = Array2::zeros((12, 2));
    for i in 0..12 {
        cov[[i, 0]] = i as f64 / 3.0;
        cov[[i, 1]] = i as f64 / 3.0;
    }
    let x = DesignMatrix::with_intercept(&cov).unwrap();
    let y: Vec<f64> = (0..12).map(|i| i as f64).collect();
    assert!(matches!(
        refit_unpenalized(&x, &y, Family::Gaussian, &[0, 1, 2]),
        Err(SolverError::RefitFailed { reason: RefitFailure::Singular })
    ));
}

#[test]
fn refit_detects_separation() {
    let mut cov = Array2::zeros((20, 1));
    let mut a = vec![0.0; 20];
    for i in 0..20 {
        cov[[i, 0]] = i as f64 - 9.5;
        a[i] = if i >= 10 { 1.0 } else { 0.0 };
    }
    let x = DesignMatrix::with_intercept(&cov).unwrap();
    let err = refit_unpenalized(&x, &a, Family::Logistic, &[0, 1]).unwrap_err();
    assert!(matches!(
        err,
        SolverError::RefitFailed {
            reason: RefitFailure::Separation | RefitFailure::NoConvergence
        }
    ));
}

#[test]
fn objective_trace_is_monotone() {
    let x = random_design(40, 8, 18);
    let w = ObservationWeights::new(Array1::from_shape_fn(40, |i| 0.1 + (i % 7) as f64 * 0.2))
        .unwrap();
    let y = random_response(&x, &[0.0, 1.0, -0.5, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0], 0.5, 19);
    let opts = FitOptions { record_objective: true, ..FitOptions::default() };
    let fit = fit_weighted_lasso_with(&x, &y, &w, 0.05, &opts).unwrap();
    let trace = fit.objective_trace.as_ref().unwrap();
    assert!(trace.len() >= 2);
    for pair in trace.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-12, "objective increased: {} -> {}", pair[0], pair[1]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let a: Vec<f64> = (0..40).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let lfit = fit_lasso_logistic_with(&x, &a, 0.03, &opts).unwrap();
    let ltrace = lfit.objective_trace.as_ref().unwrap();
    for pair in ltrace.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-12);
    }
}

#[test]
fn penalty_path_nesting_holds() {
    let x = random_design(35, 6, 21);
    let w = ObservationWeights::unit(35);
    let y = random_response(&x, &[0.2, 0.8, 0.0, -1.2, 0.0, 0.4, 0.0], 0.6, 22);
    let objective = |beta: &Array1<f64>, lambda: f64| -> f64 {
        let eta = x.linear_predictor(beta.as_slice().unwrap());
        let rss: f64 = y.iter().zip(&eta).map(|(&yi, &e)| (yi - e) * (yi - e)).sum();
        let pen: f64 = (1..x.p()).map(|j| beta[j].abs()).sum();
        rss / (2.0 * 35.0) + lambda * pen
    };
    let (l1, l2) = (0.2, 0.05);
    let f1 = fit_weighted_lasso(&x, &y, &w, l1).unwrap();
    let f2 = fit_weighted_lasso(&x, &y, &w, l2).unwrap();
    assert!(objective(&f2.coefficients, l2) <= objective(&f1.coefficients, l2) + 1e-10);
}

#[test]
fn permutation_equivariance_bitwise_gaussian() {
    let x = random_design(30, 5, 23);
    let w = ObservationWeights::new(Array1::from_shape_fn(30, |i| 0.3 + (i % 4) as f64 * 0.4))
        .unwrap();
    let y = random_response(&x, &[0.1, 0.9, -0.7, 0.0, 0.2, 0.0], 0.4, 24);
    let fit = fit_weighted_lasso(&x, &y, &w, 0.07).unwrap();

    // Reverse plus interleave permutation.
    let perm: Vec<usize> = (0..30).map(|i| (7 * i + 3) % 30).collect();
    let xp = x.subset_rows(&perm);
    let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
    let wp = ObservationWeights::new(Array1::from_vec(
        perm.iter().map(|&i| w.as_slice()[i]).collect(),
    ))
    .unwrap();
    let fitp = fit_weighted_lasso(&xp, &yp, &wp, 0.07).unwrap();
    for j in 0..x.p() {
        assert_eq!(fit.coefficients[j].to_bits(), fitp.coefficients[j].to_bits());
    }
}

#[test]
fn permutation_equivariance_logistic() {
    let x = random_design(36, 4, 25);
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let a: Vec<f64> = (0..36).map(|_| if rng.gen_bool(0.45) { 1.0 } else { 0.0 }).collect();
    let fit = fit_lasso_logistic(&x, &a, 0.04).unwrap();
    let perm: Vec<usize> = (0..36).map(|i| (11 * i + 5) % 36).collect();
    let xp = x.subset_rows(&perm);
    let ap: Vec<f64> = perm.iter().map(|&i| a[i]).collect();
    let fitp = fit_lasso_logistic(&xp, &ap, 0.04).unwrap();
    for j in 0..x.p() {
        assert!((fit.coefficients[j] - fitp.coefficients[j]).abs() <= 1e-10);
    }
}

#[test]
fn column_scaling_maps_back() {
    let x = random_design(40, 5, 27);
    let w = ObservationWeights::unit(40);
    let y = random_response(&x, &[0.2, 1.1, 0.0, -0.6, 0.0, 0.3], 0.5, 28);
    let c = 3.7;
    // Scaling every penalized column by c while dividing the uniform penalty
    // by c is the equivalent per-column rescaling: solutions map back as
    // beta_j -> beta_j / c.
    let mut scaled = Array2::zeros((40, 5));
    for j in 0..5 {
        for i in 0..40 {
            scaled[[i, j]] = x.column_slice(j + 1)[i] * c;
        }
    }
    let xs = DesignMatrix::with_intercept(&scaled).unwrap();
    let lambda = 0.08;
    let base = fit_weighted_lasso(&x, &y, &w, lambda / c).unwrap();
    let rescaled = fit_weighted_lasso(&xs, &y, &w, lambda).unwrap();
    assert!((base.coefficients[0] - rescaled.coefficients[0]).abs() < 1e-8);
    for j in 1..x.p() {
        assert!(
            (base.coefficients[j] - rescaled.coefficients[j] * c).abs() < 1e-8,
            "column {j}"
        );
    }
}

#[test]
fn kkt_certificate_holds_on_random_fits() {
    for seed in 0..20 {
        let n = 20 + (seed as usize % 5) * 8;
        let pcov = 3 + (seed as usize % 4);
        let x = random_design(n, pcov, 100 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let w = ObservationWeights::new(Array1::from_shape_fn(n, |_| rng.gen_range(0.05..1.0)))
            .unwrap();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lambda = rng.gen_range(0.01..0.3);
        let fit = fit_weighted_lasso(&x, &y, &w, lambda).unwrap();
        assert!(fit.converged);
        assert!(fit.kkt_gap <= 1e-6, "kkt gap {}", fit.kkt_gap);

        // Independent recomputation of the KKT system.
        let eta = fit.linear_predictor(&x);
        let nf = n as f64;
        for j in 0..x.p() {
            let col = x.column_slice(j);
            let g: f64 = (0..n).map(|i| w.as_slice()[i] * (y[i] - eta[i]) * col[i]).sum::<f64>()
                / nf;
            if j == 0 {
                assert!(g.abs() <= 2e-6, "intercept gradient {g}");
            } else if fit.coefficients[j] != 0.0 {
                assert!(
                    (g - fit.coefficients[j].signum() * lambda).abs() <= 2e-6,
                    "active column {j}: gradient {g} vs lambda {lambda}"
                );
            } else {
                assert!(g.abs() <= lambda + 2e-6, "inactive column {j}: gradient {g}");
            }
        }
    }
}

#[test]
fn cv_is_deterministic_given_seed() {
    let x = random_design(48, 6, 29);
    let y = random_response(&x, &[0.1, 0.8, 0.0, 0.0, -0.5, 0.0, 0.0], 0.5, 30);
    let w = ObservationWeights::unit(48);
    let lmax = lambda_max_gaussian(&x, &y, &w);
    let spec = CvSpec::new(6, default_lambda_grid(lmax, 40, 1e-3), 31);
    let r1 = cross_validate(&x, &y, Family::Gaussian, None, &spec).unwrap();
    let r2 = cross_validate(&x, &y, Family::Gaussian, None, &spec).unwrap();
    assert_eq!(r1.lambda, r2.lambda);
    assert_eq!(r1.mean_losses, r2.mean_losses);
}
