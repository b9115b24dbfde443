//! Nuisance estimation for the doubly robust score.
//!
//! The propensity side selects a penalty by cross-validation, fits the
//! penalized logistic model, then refits the selected support by maximum
//! likelihood; when the refit fails (separation, singular Hessian) the
//! penalty is bumped up by a small factor and the select→refit cycle
//! repeats. The outcome side solves the weighted Lasso whose stationarity
//! system keeps the sup-norm of the score's γ-gradient below the penalty —
//! the bias-reduction certificate is stored on the fit as `bias_gap`.

use crate::design::{DesignMatrix, ObservationWeights};
use crate::score::EffectParameter;
use crate::solvers::{
    self, cross_validate, fit_lasso_logistic_with, fit_weighted_lasso_with, refit_unpenalized,
    CvSpec, Family, FitOptions, PenalizedFit, SolverError,
};
use ndarray::Array1;

#[derive(Debug, thiserror::Error)]
pub enum NuisanceError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("propensity refit infeasible after {bumps} penalty bumps")]
    PropensityRefitInfeasible { bumps: usize },
    #[error("outcome nuisance solver did not converge (KKT gap {kkt_gap:.3e})")]
    OutcomeNotConverged { kkt_gap: f64 },
    #[error(
        "modifier produces negative effective weights; the estimating system \
         is only Lasso-representable for nonnegative w_i * z_i"
    )]
    NegativeEffectiveWeights,
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    DimensionMismatch { what: &'static str, got: usize, expected: usize },
}

/// Penalty-bump policy for failed maximum-likelihood refits.
#[derive(Debug, Clone, Copy)]
pub struct BumpPolicy {
    pub factor: f64,
    pub max_bumps: usize,
}

impl Default for BumpPolicy {
    fn default() -> Self {
        Self { factor: 1.05, max_bumps: 100 }
    }
}

/// Propensity pipeline options. Predictions come from the maximum
/// likelihood refit by default; `refit = false` uses the penalized fit
/// directly.
#[derive(Debug, Clone, Default)]
pub struct PropensityOptions {
    pub bump: BumpPolicy,
    pub penalized_only: bool,
}

/// Fitted propensity model π̂ = expit(γ̂ᵀL).
#[derive(Debug, Clone)]
pub struct PropensityFit {
    /// Coefficients used for prediction (refit values on the selected
    /// support, zeros elsewhere; the penalized coefficients when
    /// `penalized_only` is set).
    pub gamma_hat: Array1<f64>,
    /// Fitted probabilities in (0,1).
    pub pi_hat: Array1<f64>,
    /// The penalty at which the final selection happened.
    pub lambda_gamma: f64,
    /// Number of penalty bumps before the refit succeeded.
    pub bumped: usize,
    /// Support of the refit (active penalized coefficients plus intercept).
    pub refit_support: Vec<usize>,
    /// The penalized fit behind the selection.
    pub penalized_fit: PenalizedFit,
}

impl PropensityFit {
    /// Working weights w_i = π̂_i (1 − π̂_i).
    pub fn weights(&self) -> ObservationWeights {
        let w = self.pi_hat.mapv(|p| p * (1.0 - p));
        ObservationWeights::new(w).expect("propensity probabilities are clamped inside (0,1)")
    }
}

/// Cross-validated penalized logistic fit with maximum-likelihood refitting
/// and penalty bumping on refit failure.
pub fn estimate_propensity(
    l: &DesignMatrix,
    a: &[f64],
    cv: &CvSpec,
    opts: &PropensityOptions,
) -> Result<PropensityFit, NuisanceError> {
    let selected = cross_validate(l, a, Family::Logistic, None, cv)?;
    let mut lambda = selected.lambda;
    let fit_opts = FitOptions::default();

    let mut bumped = 0usize;
    loop {
        let penalized = fit_lasso_logistic_with(l, a, lambda, &fit_opts)?;
        if !penalized.converged {
            return Err(NuisanceError::Solver(SolverError::NotConverged {
                iterations: penalized.iterations,
                kkt_gap: penalized.kkt_gap,
            }));
        }

        let mut support: Vec<usize> = penalized.active_set.clone();
        if !support.contains(&l.intercept_column()) {
            support.push(l.intercept_column());
            support.sort_unstable();
        }

        if opts.penalized_only {
            let pi_hat = penalized.linear_predictor(l).mapv(crate::solvers::prob);
            return Ok(PropensityFit {
                gamma_hat: penalized.coefficients.clone(),
                pi_hat,
                lambda_gamma: lambda,
                bumped,
                refit_support: support,
                penalized_fit: penalized,
            });
        }

        let refit_ok = if support.len() >= l.n() {
            Err(SolverError::BadSupport { what: "support size must be < n" })
        } else {
            refit_unpenalized(l, a, Family::Logistic, &support)
        };
        match refit_ok {
            Ok(gamma_hat) => {
                let pi_hat = l
                    .linear_predictor(gamma_hat.as_slice().expect("contiguous"))
                    .mapv(crate::solvers::prob);
                return Ok(PropensityFit {
                    gamma_hat,
                    pi_hat,
                    lambda_gamma: lambda,
                    bumped,
                    refit_support: support,
                    penalized_fit: penalized,
                });
            }
            Err(SolverError::RefitFailed { .. }) | Err(SolverError::BadSupport { .. }) => {
                bumped += 1;
                if bumped > opts.bump.max_bumps {
                    return Err(NuisanceError::PropensityRefitInfeasible { bumps: bumped - 1 });
                }
                lambda *= opts.bump.factor;
            }
            Err(e) => return Err(NuisanceError::Solver(e)),
        }
    }
}

/// The outcome nuisance fit: coefficients of the weighted Lasso at H(ψ),
/// fitted values, and the bias-reduction certificate.
#[derive(Debug, Clone)]
pub struct OutcomeNuisanceFit {
    pub beta_hat: Array1<f64>,
    pub m_hat: Array1<f64>,
    pub lambda_beta: f64,
    pub psi_at_fit: EffectParameter,
    /// Sup-norm of `(1/n) Σ w̃_i (H_i − m̂_i) L_i` over penalized
    /// coordinates (w̃ includes the modifier). Bounded by λ_β at a solution.
    pub bias_gap: f64,
    pub fit: PenalizedFit,
}

/// Combines observation weights with an optional modifier into the
/// effective weights of the estimating system, rejecting sign-indefinite
/// products.
pub(crate) fn effective_weights(
    weights: &ObservationWeights,
    modifier: Option<&[f64]>,
) -> Result<Vec<f64>, NuisanceError> {
    match modifier {
        None => Ok(weights.as_slice().to_vec()),
        Some(z) => {
            let w = weights.as_slice();
            if z.len() != w.len() {
                return Err(NuisanceError::DimensionMismatch {
                    what: "modifier",
                    got: z.len(),
                    expected: w.len(),
                });
            }
            let prod: Vec<f64> = w.iter().zip(z).map(|(&wi, &zi)| wi * zi).collect();
            if prod.iter().any(|&v| v < 0.0) {
                return Err(NuisanceError::NegativeEffectiveWeights);
            }
            Ok(prod)
        }
    }
}

fn degenerate_zero_fit(l: &DesignMatrix, lambda_beta: f64, psi: EffectParameter) -> OutcomeNuisanceFit {
    OutcomeNuisanceFit {
        beta_hat: Array1::zeros(l.p()),
        m_hat: Array1::zeros(l.n()),
        lambda_beta,
        psi_at_fit: psi,
        bias_gap: 0.0,
        fit: PenalizedFit {
            coefficients: Array1::zeros(l.p()),
            lambda: lambda_beta,
            active_set: Vec::new(),
            kkt_gap: 0.0,
            iterations: 0,
            converged: true,
            objective_trace: None,
        },
    }
}

/// Solves the weighted Lasso estimating system for the outcome nuisance at a
/// fixed ψ. `modifier`, when present, multiplies the working regressor (the
/// effect-heterogeneity system); effective weights must stay nonnegative.
pub fn estimate_outcome_nuisance(
    l: &DesignMatrix,
    h: &[f64],
    weights: &ObservationWeights,
    lambda_beta: f64,
    modifier: Option<&[f64]>,
    psi_at_fit: EffectParameter,
) -> Result<OutcomeNuisanceFit, NuisanceError> {
    let n = l.n();
    if h.len() != n {
        return Err(NuisanceError::DimensionMismatch {
            what: "transformed outcome",
            got: h.len(),
            expected: n,
        });
    }
    let effective = effective_weights(weights, modifier)?;
    if effective.iter().all(|&v| v == 0.0) {
        // Degenerate modifier (e.g. Z identically zero): every coefficient
        // vector solves the estimating system; pin the zero solution.
        return Ok(degenerate_zero_fit(l, lambda_beta, psi_at_fit));
    }

    let eff_weights = ObservationWeights::new(Array1::from_vec(effective))
        .expect("nonnegative, not all zero by the checks above");
    let fit = fit_weighted_lasso_with(l, h, &eff_weights, lambda_beta, &FitOptions::default())?;
    if !fit.converged {
        return Err(NuisanceError::OutcomeNotConverged { kkt_gap: fit.kkt_gap });
    }

    let m_hat = fit.linear_predictor(l);
    let bias_gap = bias_gap(l, h, &m_hat, eff_weights.as_slice());
    Ok(OutcomeNuisanceFit {
        beta_hat: fit.coefficients.clone(),
        m_hat,
        lambda_beta,
        psi_at_fit,
        bias_gap,
        fit,
    })
}

/// A reusable solver for outcome nuisance fits that share a design and
/// weights but vary H(ψ) — one preparation, warm-started refits across the
/// ψ grid.
pub(crate) struct PreparedOutcomeSolver {
    prepared: solvers::PreparedCd,
    penalty: Vec<f64>,
    lambda_beta: f64,
    eff_weights: Vec<f64>,
    degenerate: bool,
}

impl PreparedOutcomeSolver {
    pub fn new(
        l: &DesignMatrix,
        weights: &ObservationWeights,
        modifier: Option<&[f64]>,
        lambda_beta: f64,
    ) -> Result<Self, NuisanceError> {
        let effective = effective_weights(weights, modifier)?;
        let degenerate = effective.iter().all(|&v| v == 0.0);
        let opts = FitOptions::default();
        let prepared = solvers::PreparedCd::new(
            l,
            if degenerate { weights.as_slice() } else { &effective },
            None,
            opts.cd_options(),
        );
        let penalty = opts.penalty_vector(l, lambda_beta);
        Ok(Self { prepared, penalty, lambda_beta, eff_weights: effective, degenerate })
    }

    pub fn solve(
        &self,
        l: &DesignMatrix,
        h: &[f64],
        psi: EffectParameter,
        warm: Option<&[f64]>,
    ) -> Result<OutcomeNuisanceFit, NuisanceError> {
        if self.degenerate {
            return Ok(degenerate_zero_fit(l, self.lambda_beta, psi));
        }
        let sol = self.prepared.solve(h, &self.penalty, warm);
        let fit = PenalizedFit::from_solution(sol, self.lambda_beta);
        if !fit.converged {
            return Err(NuisanceError::OutcomeNotConverged { kkt_gap: fit.kkt_gap });
        }
        let m_hat = fit.linear_predictor(l);
        let bias_gap = bias_gap(l, h, &m_hat, &self.eff_weights);
        Ok(OutcomeNuisanceFit {
            beta_hat: fit.coefficients.clone(),
            m_hat,
            lambda_beta: self.lambda_beta,
            psi_at_fit: psi,
            bias_gap,
            fit,
        })
    }
}

/// Sup-norm of `(1/n) Σ w̃_i (H_i − m̂_i) L_ij` over penalized coordinates —
/// the γ-gradient of the score at the fitted nuisances.
pub fn bias_gap(l: &DesignMatrix, h: &[f64], m_hat: &Array1<f64>, weights: &[f64]) -> f64 {
    let n = l.n() as f64;
    let mut gap = 0.0_f64;
    for j in 0..l.p() {
        if j == l.intercept_column() {
            continue;
        }
        let col = l.column_slice(j);
        let mut g = 0.0;
        for i in 0..l.n() {
            g += weights[i] * (h[i] - m_hat[i]) * col[i];
        }
        gap = gap.max((g / n).abs());
    }
    gap
}

/// Cross-validated penalty for the outcome nuisance, run at the null ψ = 0
/// (the selected value is then held fixed across the ψ grid).
pub fn select_lambda_beta(
    l: &DesignMatrix,
    h_at_null: &[f64],
    weights: &ObservationWeights,
    cv: &CvSpec,
) -> Result<f64, NuisanceError> {
    let res = cross_validate(l, h_at_null, Family::WeightedGaussian, Some(weights), cv)?;
    Ok(res.lambda)
}

#[cfg(test)]
mod tests;
