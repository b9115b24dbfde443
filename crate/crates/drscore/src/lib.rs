//! Doubly robust score-test confidence intervals for conditional treatment
//! effects in high-dimensional linear and log-linear models.
//!
//! The estimation target is the coefficient ψ in
//! `g{E(Y|A=a,L)} − g{E(Y|A=0,L)} = ψ a` with identity or log link. Nuisance
//! models for the exposure (penalized logistic regression with maximum
//! likelihood refitting) and the outcome (a weighted Lasso whose stationarity
//! system forces the score's γ-gradient below the penalty level) are combined
//! in a doubly robust score. Confidence intervals come from inverting the
//! score test over a ψ grid; the point estimate minimizes the squared
//! statistic.
//!
//! Modules:
//! - [`solvers`]: L1-penalized regression (Gaussian, weighted Gaussian,
//!   logistic) by cyclic coordinate descent, K-fold cross-validation and
//!   unpenalized refitting.
//! - [`score`]: outcome transform H(ψ), the doubly robust score, variance
//!   estimate and test statistic.
//! - [`nuisance`]: the propensity select→refit→bump pipeline and the
//!   bias-reducing outcome nuisance fit.
//! - [`inversion`]: interval construction by test inversion, point
//!   estimation, and two-parameter confidence regions.
//! - [`extensions`]: multi-component score systems (effect heterogeneity,
//!   categorical exposures, controlled direct effects).
//! - [`sim`]: data-generating processes, comparator estimators and the
//!   Monte Carlo harness.

pub mod design;
pub mod diagnostics;
pub mod extensions;
pub mod inversion;
mod linalg;
pub mod nuisance;
pub mod score;
pub mod seeding;
pub mod sim;
pub mod solvers;
pub mod stats;

pub use design::{Dataset, DesignMatrix, ObservationWeights};
pub use inversion::{CiAnalysis, CiConfig, CiOutcome, ConfidenceInterval, GridSpec};
pub use score::{EffectParameter, LinkFunction, LogLinkForm, ScoreEvaluation};
pub use solvers::{CvSpec, Family, PenalizedFit};

/// Crate-wide error type aggregating the per-module failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Design(#[from] design::DesignError),
    #[error(transparent)]
    Solver(#[from] solvers::SolverError),
    #[error(transparent)]
    Score(#[from] score::ScoreError),
    #[error(transparent)]
    Nuisance(#[from] nuisance::NuisanceError),
    #[error(transparent)]
    Inversion(#[from] inversion::InversionError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
}

pub type Result<T> = std::result::Result<T, Error>;
