//! L1-penalized regression solvers: weighted Gaussian and logistic Lasso by
//! cyclic coordinate descent with an active-set strategy, K-fold
//! cross-validation for penalty selection, and unpenalized refitting on a
//! selected support.

mod cd;
mod cv;
mod logistic;
mod refit;

pub use cv::{cross_validate, default_lambda_grid, CvResult, CvSpec};
pub use refit::refit_unpenalized;

pub(crate) use cd::{CdOptions, PreparedCd};
pub(crate) use cv::cross_validate_with_penalty_factors;

use crate::design::{DesignMatrix, ObservationWeights};
use ndarray::Array1;

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    DimensionMismatch { what: &'static str, got: usize, expected: usize },
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("penalty must be nonnegative and finite, got {lambda}")]
    BadPenalty { lambda: f64 },
    #[error("binary response must contain both classes")]
    SingleClass,
    #[error("response must be coded 0/1, found {value}")]
    NotBinary { value: f64 },
    #[error("solver did not converge after {iterations} sweeps (KKT gap {kkt_gap:.3e})")]
    NotConverged { iterations: usize, kkt_gap: f64 },
    #[error("refit failed: {reason}")]
    RefitFailed { reason: RefitFailure },
    #[error("invalid support: {what}")]
    BadSupport { what: &'static str },
    #[error("invalid cross-validation spec: {what}")]
    BadCvSpec { what: &'static str },
    #[error("cross-validation fold contained a single class even after refolding")]
    SingleClassFold,
}

/// Why an unpenalized refit was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefitFailure {
    Singular,
    Separation,
    NoConvergence,
}

impl std::fmt::Display for RefitFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RefitFailure::Singular => write!(f, "singular restricted design"),
            RefitFailure::Separation => write!(f, "separation (unbounded linear predictor)"),
            RefitFailure::NoConvergence => write!(f, "no convergence"),
        }
    }
}

/// Model family for penalized fits and cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Gaussian,
    WeightedGaussian,
    Logistic,
}

/// One converged (or explicitly non-converged) L1 fit.
#[derive(Debug, Clone)]
pub struct PenalizedFit {
    /// Raw-scale coefficients, length p (intercept included).
    pub coefficients: Array1<f64>,
    /// The uniform penalty level on the penalized columns.
    pub lambda: f64,
    /// Indices of nonzero coefficients.
    pub active_set: Vec<usize>,
    /// Sup-norm of the KKT violation at the returned coefficients.
    pub kkt_gap: f64,
    /// Coordinate-descent sweeps spent (cumulative inner sweeps for
    /// logistic fits).
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each sweep when recording was requested.
    pub objective_trace: Option<Vec<f64>>,
}

impl PenalizedFit {
    pub(crate) fn from_solution(sol: cd::CdSolution, lambda: f64) -> Self {
        let active_set =
            sol.beta.iter().enumerate().filter(|(_, &b)| b != 0.0).map(|(j, _)| j).collect();
        Self {
            coefficients: Array1::from_vec(sol.beta),
            lambda,
            active_set,
            kkt_gap: sol.kkt_gap,
            iterations: sol.iterations,
            converged: sol.converged,
            objective_trace: sol.objective_trace,
        }
    }

    /// Fitted linear predictor on a design.
    pub fn linear_predictor(&self, x: &DesignMatrix) -> Array1<f64> {
        x.linear_predictor(self.coefficients.as_slice().expect("contiguous"))
    }
}

/// Tuning knobs for [`fit_weighted_lasso`] / [`fit_lasso_logistic`]. The
/// defaults match the documented solver contract; tests occasionally tighten
/// the tolerances.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Internal standardization of penalized columns (exact
    /// reparametrization; the solved raw-scale problem is unchanged).
    pub standardize: bool,
    /// Deviation toggle: penalize the intercept column too.
    pub penalize_intercept: bool,
    pub tol_coef: f64,
    pub tol_kkt: f64,
    pub max_sweeps: usize,
    pub record_objective: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            standardize: true,
            penalize_intercept: false,
            tol_coef: 1e-7,
            tol_kkt: 1e-6,
            max_sweeps: 10_000,
            record_objective: false,
        }
    }
}

impl FitOptions {
    pub(crate) fn cd_options(&self) -> CdOptions {
        CdOptions {
            // A penalized intercept must run as an ordinary coordinate, so
            // the implicit-intercept standardized path is disabled for it.
            standardize: self.standardize && !self.penalize_intercept,
            tol_coef: self.tol_coef,
            tol_kkt: self.tol_kkt,
            max_sweeps: self.max_sweeps,
            record_objective: self.record_objective,
            canonicalize: true,
        }
    }

    pub(crate) fn penalty_vector(&self, x: &DesignMatrix, lambda: f64) -> Vec<f64> {
        let mut pen = vec![lambda; x.p()];
        if !self.penalize_intercept {
            pen[x.intercept_column()] = 0.0;
        }
        pen
    }
}

fn validate_gaussian_inputs(
    x: &DesignMatrix,
    y: &[f64],
    w: &ObservationWeights,
    lambda: f64,
) -> Result<(), SolverError> {
    if y.len() != x.n() {
        return Err(SolverError::DimensionMismatch { what: "response", got: y.len(), expected: x.n() });
    }
    if w.len() != x.n() {
        return Err(SolverError::DimensionMismatch { what: "weights", got: w.len(), expected: x.n() });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite { what: "response" });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(SolverError::BadPenalty { lambda });
    }
    Ok(())
}

/// Weighted Lasso: minimizes
/// `(1/2n) Σ w_i (y_i − βᵀx_i)² + λ Σ_{j ≠ intercept} |β_j|`.
///
/// The returned fit satisfies the raw-scale KKT system at the solver
/// tolerance: penalized gradients within λ (with equality on the active
/// set) and a zero intercept gradient. Non-convergence is reported through
/// `converged = false`, never silently.
pub fn fit_weighted_lasso(
    x: &DesignMatrix,
    y: &[f64],
    w: &ObservationWeights,
    lambda: f64,
) -> Result<PenalizedFit, SolverError> {
    fit_weighted_lasso_with(x, y, w, lambda, &FitOptions::default())
}

pub fn fit_weighted_lasso_with(
    x: &DesignMatrix,
    y: &[f64],
    w: &ObservationWeights,
    lambda: f64,
    opts: &FitOptions,
) -> Result<PenalizedFit, SolverError> {
    validate_gaussian_inputs(x, y, w, lambda)?;
    let prepared = PreparedCd::new(x, w.as_slice(), Some(y), opts.cd_options());
    let penalty = opts.penalty_vector(x, lambda);
    let sol = prepared.solve(y, &penalty, None);
    Ok(PenalizedFit::from_solution(sol, lambda))
}

/// L1-penalized logistic regression: minimizes
/// `(1/n) Σ [log(1+exp(γᵀx_i)) − a_i γᵀx_i] + λ Σ_{j ≠ intercept} |γ_j|`
/// by IRLS with a coordinate-descent inner loop and step-halving.
pub fn fit_lasso_logistic(
    x: &DesignMatrix,
    a: &[f64],
    lambda: f64,
) -> Result<PenalizedFit, SolverError> {
    fit_lasso_logistic_with(x, a, lambda, &FitOptions::default())
}

pub fn fit_lasso_logistic_with(
    x: &DesignMatrix,
    a: &[f64],
    lambda: f64,
    opts: &FitOptions,
) -> Result<PenalizedFit, SolverError> {
    check_binary(a, x.n())?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(SolverError::BadPenalty { lambda });
    }
    let penalty = opts.penalty_vector(x, lambda);
    let sol = logistic::PreparedLogistic::new(x, a, &opts.cd_options()).solve(&penalty, None);
    Ok(PenalizedFit::from_solution(sol, lambda))
}

pub(crate) fn check_binary(a: &[f64], n: usize) -> Result<(), SolverError> {
    if a.len() != n {
        return Err(SolverError::DimensionMismatch { what: "exposure", got: a.len(), expected: n });
    }
    let mut seen = [false, false];
    for &v in a {
        if v == 0.0 {
            seen[0] = true;
        } else if v == 1.0 {
            seen[1] = true;
        } else {
            return Err(SolverError::NotBinary { value: v });
        }
    }
    if !(seen[0] && seen[1]) {
        return Err(SolverError::SingleClass);
    }
    Ok(())
}

/// Smallest penalty at which the weighted-Gaussian fit is the intercept-only
/// model: the sup-norm of the null-model gradient over penalized columns.
pub fn lambda_max_gaussian(x: &DesignMatrix, y: &[f64], w: &ObservationWeights) -> f64 {
    let n = x.n() as f64;
    let ws = w.as_slice();
    let sum_w: f64 = ws.iter().sum();
    let y_bar = y.iter().zip(ws).map(|(&yi, &wi)| wi * yi).sum::<f64>() / sum_w;
    let mut lmax = 0.0_f64;
    for j in 0..x.p() {
        if j == x.intercept_column() {
            continue;
        }
        let col = x.column_slice(j);
        let g: f64 =
            col.iter().zip(y.iter().zip(ws)).map(|(&xv, (&yi, &wi))| wi * (yi - y_bar) * xv).sum();
        lmax = lmax.max((g / n).abs());
    }
    lmax
}

/// Logistic analogue of [`lambda_max_gaussian`] (gradient at the
/// intercept-only maximum likelihood fit).
pub fn lambda_max_logistic(x: &DesignMatrix, a: &[f64]) -> f64 {
    let n = x.n() as f64;
    let a_bar = a.iter().sum::<f64>() / n;
    let mut lmax = 0.0_f64;
    for j in 0..x.p() {
        if j == x.intercept_column() {
            continue;
        }
        let col = x.column_slice(j);
        let g: f64 = col.iter().zip(a).map(|(&xv, &ai)| (ai - a_bar) * xv).sum();
        lmax = lmax.max((g / n).abs());
    }
    lmax
}

pub(crate) fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Probability clamp used throughout the logistic paths.
pub(crate) const PROB_CLAMP: f64 = 1e-8;

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Clamped fitted probability at a linear predictor value.
pub(crate) fn prob(eta: f64) -> f64 {
    clamp_prob(expit(eta))
}

#[cfg(test)]
mod tests;
