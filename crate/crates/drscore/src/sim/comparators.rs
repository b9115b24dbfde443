//! Comparator estimators from the simulation study: naive post-Lasso with a
//! forced exposure, post-double selection, and partialling out, each with
//! cross-validated or plugin penalties and a normal-theory interval.

use super::SimError;
use crate::design::{Dataset, DesignMatrix, ObservationWeights};
use crate::solvers::{
    self, cross_validate_with_penalty_factors, default_lambda_grid, lambda_max_gaussian,
    refit_unpenalized, CvSpec, Family, FitOptions, SolverError,
};
use crate::stats::normal_quantile;
use ndarray::{Array1, Array2};

/// Penalty selection rule for the comparators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyRule {
    /// Iterated plugin `lambda = c sigma_hat sqrt(2 log(2p/alpha~)/n)` with
    /// c = 1.1 and alpha~ = 0.05 / log(n v p).
    Plugin,
    /// K-fold cross-validation.
    Cv { folds: usize },
}

/// Point estimate with a model-based standard error.
#[derive(Debug, Clone, Copy)]
pub struct CompEstimate {
    pub psi_hat: f64,
    pub se: f64,
}

impl CompEstimate {
    /// Two-sided normal interval at level alpha.
    pub fn interval(&self, alpha: f64) -> (f64, f64) {
        let z = normal_quantile(1.0 - alpha / 2.0);
        (self.psi_hat - z * self.se, self.psi_hat + z * self.se)
    }

    pub fn covers(&self, psi: f64, alpha: f64) -> bool {
        let (lo, hi) = self.interval(alpha);
        lo <= psi && psi <= hi
    }
}

const PLUGIN_C: f64 = 1.1;
const PLUGIN_MAX_ITER: usize = 15;

/// Iterated plugin penalty for a Gaussian Lasso of `y` on the penalized
/// columns of `x`.
pub fn plugin_lambda(x: &DesignMatrix, y: &[f64], seed_sd: f64) -> f64 {
    let n = x.n() as f64;
    let p = x.p() as f64;
    let alpha_t = 0.05 / n.max(p).ln();
    let rate = (2.0 * (2.0 * p / alpha_t).ln() / n).sqrt();
    let w = ObservationWeights::unit(x.n());
    let mut sigma = seed_sd.max(1e-12);
    let mut lambda = PLUGIN_C * sigma * rate;
    for _ in 0..PLUGIN_MAX_ITER {
        let fit = match solvers::fit_weighted_lasso(x, y, &w, lambda) {
            Ok(f) => f,
            Err(_) => break,
        };
        let eta = fit.linear_predictor(x);
        let rss: f64 = y.iter().zip(eta.iter()).map(|(&yi, &e)| (yi - e) * (yi - e)).sum();
        let new_sigma = (rss / n).sqrt().max(1e-12);
        let new_lambda = PLUGIN_C * new_sigma * rate;
        if (new_sigma - sigma).abs() <= 1e-4 * sigma {
            lambda = new_lambda;
            break;
        }
        sigma = new_sigma;
        lambda = new_lambda;
    }
    lambda
}

fn sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn select_lambda(
    x: &DesignMatrix,
    y: &[f64],
    rule: PenaltyRule,
    seed: u64,
    factors: Option<&[f64]>,
) -> Result<f64, SolverError> {
    match rule {
        PenaltyRule::Plugin => Ok(plugin_lambda(x, y, sd(y))),
        PenaltyRule::Cv { folds } => {
            let w = ObservationWeights::unit(x.n());
            let lmax = lambda_max_gaussian(x, y, &w).max(1e-10);
            let spec = CvSpec::new(folds, default_lambda_grid(lmax, 100, 1e-3), seed);
            let res = cross_validate_with_penalty_factors(x, y, Family::Gaussian, None, &spec, factors)?;
            Ok(res.lambda)
        }
    }
}

fn lasso_support(
    x: &DesignMatrix,
    y: &[f64],
    lambda: f64,
    factors: Option<&[f64]>,
) -> Result<Vec<usize>, SolverError> {
    let w = ObservationWeights::unit(x.n());
    let fit = match factors {
        None => solvers::fit_weighted_lasso(x, y, &w, lambda)?,
        Some(f) => {
            let opts = FitOptions::default();
            let prepared = solvers::PreparedCd::new(x, w.as_slice(), Some(y), opts.cd_options());
            let penalty: Vec<f64> = f.iter().map(|&fj| fj * lambda).collect();
            let sol = prepared.solve(y, &penalty, None);
            solvers::PenalizedFit::from_solution(sol, lambda)
        }
    };
    Ok(fit.active_set)
}

/// OLS of `y` on the support columns with the homoscedastic standard error
/// of `target` (a column index in the support).
fn ols_with_se(
    x: &DesignMatrix,
    y: &[f64],
    support: &[usize],
    target: usize,
) -> Result<CompEstimate, SimError> {
    let n = x.n();
    let k = support.len();
    if k >= n {
        return Err(SimError::ReplicationFailed { what: "refit support as large as n".into() });
    }
    let coefs = refit_unpenalized(x, y, Family::Gaussian, support)
        .map_err(|e| SimError::ReplicationFailed { what: format!("OLS refit: {e}") })?;
    let eta = x.linear_predictor(coefs.as_slice().expect("contiguous"));
    let rss: f64 = y.iter().zip(eta.iter()).map(|(&yi, &e)| (yi - e) * (yi - e)).sum();
    let dof = (n - k) as f64;
    let sigma2 = rss / dof;

    // (X'X)^{-1} on the support, scaled by n internally.
    let pos = support.iter().position(|&j| j == target).expect("target in support");
    let cols: Vec<&[f64]> = support.iter().map(|&j| x.column_slice(j)).collect();
    let mut gram = Array2::<f64>::zeros((k, k));
    for s in 0..k {
        for t in s..k {
            let v: f64 = cols[s].iter().zip(cols[t]).map(|(&a, &b)| a * b).sum();
            gram[[s, t]] = v;
            gram[[t, s]] = v;
        }
    }
    let l = crate::linalg::cholesky(&gram, 1e-12)
        .ok_or(SimError::ReplicationFailed { what: "singular OLS design".into() })?;
    let mut e = Array1::zeros(k);
    e[pos] = 1.0;
    let inv_col = crate::linalg::cholesky_solve(&l, &e);
    let var = sigma2 * inv_col[pos];
    if !(var.is_finite() && var >= 0.0) {
        return Err(SimError::ReplicationFailed { what: "non-finite OLS variance".into() });
    }
    Ok(CompEstimate { psi_hat: coefs[target], se: var.sqrt() })
}

/// Design `[1 | A | L*]` used by the naive post-Lasso.
fn design_with_exposure(data: &Dataset) -> DesignMatrix {
    let (n, p) = (data.design.n(), data.design.p());
    let mut cov = Array2::zeros((n, p));
    cov.column_mut(0).assign(&data.a);
    for j in 1..p {
        cov.column_mut(j).assign(&data.design.column(j));
    }
    DesignMatrix::with_intercept(&cov).expect("valid augmented design")
}

/// Naive post-selection: Lasso of Y on (A, L) with the exposure forced in,
/// OLS refit on the selected model, homoscedastic standard error.
pub fn estimate_naive_post_lasso(
    data: &Dataset,
    folds: usize,
    seed: u64,
) -> Result<CompEstimate, SimError> {
    let x = design_with_exposure(data);
    let y = data.y.as_slice().expect("contiguous");
    // Penalty factors: intercept (0) and exposure (col 1) unpenalized.
    let mut factors = vec![1.0; x.p()];
    factors[0] = 0.0;
    factors[1] = 0.0;
    let lambda = select_lambda(&x, y, PenaltyRule::Cv { folds }, seed, Some(&factors))
        .map_err(|e| SimError::ReplicationFailed { what: format!("penalty selection: {e}") })?;
    let mut support = lasso_support(&x, y, lambda, Some(&factors))
        .map_err(|e| SimError::ReplicationFailed { what: format!("lasso: {e}") })?;
    for forced in [0usize, 1usize] {
        if !support.contains(&forced) {
            support.push(forced);
        }
    }
    support.sort_unstable();
    ols_with_se(&x, y, &support, 1)
}

/// Post-double selection: OLS of Y on A plus the union of supports from a
/// Lasso of Y on L and a Lasso of A on L.
pub fn estimate_post_double_selection(
    data: &Dataset,
    rule: PenaltyRule,
    seed: u64,
) -> Result<CompEstimate, SimError> {
    let y = data.y.as_slice().expect("contiguous");
    let a = data.a.as_slice().expect("contiguous");
    let l = &data.design;

    let lam_y = select_lambda(l, y, rule, seed, None)
        .map_err(|e| SimError::ReplicationFailed { what: format!("outcome penalty: {e}") })?;
    let lam_a = select_lambda(l, a, rule, seed.wrapping_add(1), None)
        .map_err(|e| SimError::ReplicationFailed { what: format!("exposure penalty: {e}") })?;
    let s_y = lasso_support(l, y, lam_y, None)
        .map_err(|e| SimError::ReplicationFailed { what: format!("outcome lasso: {e}") })?;
    let s_a = lasso_support(l, a, lam_a, None)
        .map_err(|e| SimError::ReplicationFailed { what: format!("exposure lasso: {e}") })?;

    let x = design_with_exposure(data);
    // Union support shifted into the augmented design: L column j sits at
    // column j+1; the intercept (0 in L) maps to 0.
    let mut support = vec![0usize, 1usize];
    for &j in s_y.iter().chain(&s_a) {
        if j != l.intercept_column() {
            support.push(j + 1);
        }
    }
    support.sort_unstable();
    support.dedup();
    if support.len() >= x.n() {
        return Err(SimError::ReplicationFailed { what: "union support as large as n".into() });
    }
    ols_with_se(&x, y, &support, 1)
}

/// Partialling out: OLS of the Y-residual on the A-residual after Lasso
/// fits of each on L, with a heteroscedasticity-robust standard error.
pub fn estimate_partialling_out(
    data: &Dataset,
    rule: PenaltyRule,
    seed: u64,
) -> Result<CompEstimate, SimError> {
    let y = data.y.as_slice().expect("contiguous");
    let a = data.a.as_slice().expect("contiguous");
    let l = &data.design;
    let w = ObservationWeights::unit(l.n());

    let lam_y = select_lambda(l, y, rule, seed, None)
        .map_err(|e| SimError::ReplicationFailed { what: format!("outcome penalty: {e}") })?;
    let lam_a = select_lambda(l, a, rule, seed.wrapping_add(1), None)
        .map_err(|e| SimError::ReplicationFailed { what: format!("exposure penalty: {e}") })?;
    let fit_y = solvers::fit_weighted_lasso(l, y, &w, lam_y)
        .map_err(|e| SimError::ReplicationFailed { what: format!("outcome lasso: {e}") })?;
    let fit_a = solvers::fit_weighted_lasso(l, a, &w, lam_a)
        .map_err(|e| SimError::ReplicationFailed { what: format!("exposure lasso: {e}") })?;

    let ey: Vec<f64> = {
        let eta = fit_y.linear_predictor(l);
        y.iter().zip(eta.iter()).map(|(&yi, &e)| yi - e).collect()
    };
    let ea: Vec<f64> = {
        let eta = fit_a.linear_predictor(l);
        a.iter().zip(eta.iter()).map(|(&ai, &e)| ai - e).collect()
    };

    let saa: f64 = ea.iter().map(|&v| v * v).sum();
    if saa <= 1e-12 {
        return Err(SimError::ReplicationFailed { what: "degenerate exposure residual".into() });
    }
    let say: f64 = ea.iter().zip(&ey).map(|(&ai, &yi)| ai * yi).sum();
    let psi_hat = say / saa;
    let meat: f64 = ea
        .iter()
        .zip(&ey)
        .map(|(&ai, &yi)| {
            let eps = yi - psi_hat * ai;
            ai * ai * eps * eps
        })
        .sum();
    let se = (meat / (saa * saa)).sqrt();
    if !se.is_finite() {
        return Err(SimError::ReplicationFailed { what: "non-finite sandwich SE".into() });
    }
    Ok(CompEstimate { psi_hat, se })
}
