//! Simulation harness: data-generating processes, comparator estimators,
//! the Monte Carlo driver and table emission.

pub mod comparators;
pub mod dgp;
pub mod monte_carlo;
pub mod report;

pub use comparators::{CompEstimate, PenaltyRule};
pub use dgp::{
    beta_coefficients, gamma_coefficients, generate_dataset, toeplitz_covariance, BetaTail,
    DgpConfig, DgpSampler, Experiment, GammaTail,
};
pub use monte_carlo::{run_monte_carlo, EstimatorKind, EstimatorSummary, McOptions, SimulationReport};
pub use report::{emit_report, parse_report_csv, ReportFormat};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("bad simulation config: {what}")]
    BadConfig { what: String },
    #[error("replication failed: {what}")]
    ReplicationFailed { what: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
