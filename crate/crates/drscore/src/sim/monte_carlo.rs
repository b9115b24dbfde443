//! Monte Carlo driver: runs the estimators over replicated draws from a
//! DGP and aggregates bias, Monte Carlo SD, mean standard error and
//! coverage. Replication seeds derive from the master seed by counter, so
//! results are identical across thread counts and schedules.

use super::comparators::{
    estimate_naive_post_lasso, estimate_partialling_out, estimate_post_double_selection,
    PenaltyRule,
};
use super::dgp::{DgpConfig, DgpSampler};
use super::SimError;
use crate::design::Dataset;
use crate::inversion::{invert_ci_with_problem, CiConfig, CiOutcome, UnivariateScoreProblem};
use crate::score::LinkFunction;
use crate::seeding;

/// The estimators of the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    /// Score-inversion estimator with high-dimensional bias reduction.
    Hdbr,
    /// Naive post-Lasso with the exposure forced into the model.
    NaiveLasso,
    /// Post-double selection, plugin penalty.
    Pds,
    /// Partialling out, plugin penalty.
    Po,
    /// Post-double selection, cross-validated penalty.
    PdsCv,
    /// Partialling out, cross-validated penalty.
    PoCv,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Hdbr => "HDBR",
            Self::NaiveLasso => "OLS",
            Self::Pds => "PDS",
            Self::Po => "PO",
            Self::PdsCv => "PDS-CV",
            Self::PoCv => "PO-CV",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hdbr" => Some(Self::Hdbr),
            "ols" | "naive" | "naive-lasso" => Some(Self::NaiveLasso),
            "pds" => Some(Self::Pds),
            "po" => Some(Self::Po),
            "pds-cv" | "pdscv" => Some(Self::PdsCv),
            "po-cv" | "pocv" => Some(Self::PoCv),
            _ => None,
        }
    }

    pub const ALL: [EstimatorKind; 6] =
        [Self::NaiveLasso, Self::Pds, Self::Po, Self::PdsCv, Self::PoCv, Self::Hdbr];
}

/// Driver options.
#[derive(Debug, Clone)]
pub struct McOptions {
    pub replications: usize,
    pub alpha: f64,
    pub cv_folds: usize,
    pub n_lambda: usize,
    /// Rayon thread count; None uses the global default.
    pub threads: Option<usize>,
}

impl Default for McOptions {
    fn default() -> Self {
        Self { replications: 1000, alpha: 0.05, cv_folds: 20, n_lambda: 100, threads: None }
    }
}

/// Aggregated row for one estimator (the paper's table scaling: bias,
/// Monte Carlo SD and mean SE multiplied by 10, coverage by 100).
#[derive(Debug, Clone)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub bias10: f64,
    pub mcsd10: f64,
    pub mean_se10: f64,
    pub coverage100: f64,
    /// Raw score-scale standard error (×10); HDBR only.
    pub score_se10: Option<f64>,
    pub replications: usize,
    pub failures: usize,
}

/// One simulation cell's results.
#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub config: DgpConfig,
    pub alpha: f64,
    pub requested: usize,
    pub rows: Vec<EstimatorSummary>,
    /// Set when any estimator failed in more than 5% of replications.
    pub flagged: bool,
}

impl SimulationReport {
    pub fn row(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.rows.iter().find(|r| r.estimator == kind)
    }
}

#[derive(Debug, Clone, Copy)]
struct RepOutcome {
    psi_hat: f64,
    se: f64,
    covered: bool,
    score_se: Option<f64>,
}

fn run_estimator(
    kind: EstimatorKind,
    data: &Dataset,
    cfg: &DgpConfig,
    opts: &McOptions,
    rep_seed: u64,
) -> Result<RepOutcome, SimError> {
    let alpha = opts.alpha;
    let comparator_seed = |idx: u64| seeding::derive(rep_seed, seeding::salt::CV_FOLDS, 100 + idx);
    match kind {
        EstimatorKind::NaiveLasso => {
            let est = estimate_naive_post_lasso(data, opts.cv_folds, comparator_seed(0))?;
            Ok(RepOutcome {
                psi_hat: est.psi_hat,
                se: est.se,
                covered: est.covers(cfg.psi_true, alpha),
                score_se: None,
            })
        }
        EstimatorKind::Pds | EstimatorKind::PdsCv => {
            let rule = if kind == EstimatorKind::Pds {
                PenaltyRule::Plugin
            } else {
                PenaltyRule::Cv { folds: opts.cv_folds }
            };
            let est = estimate_post_double_selection(data, rule, comparator_seed(1))?;
            Ok(RepOutcome {
                psi_hat: est.psi_hat,
                se: est.se,
                covered: est.covers(cfg.psi_true, alpha),
                score_se: None,
            })
        }
        EstimatorKind::Po | EstimatorKind::PoCv => {
            let rule = if kind == EstimatorKind::Po {
                PenaltyRule::Plugin
            } else {
                PenaltyRule::Cv { folds: opts.cv_folds }
            };
            let est = estimate_partialling_out(data, rule, comparator_seed(2))?;
            Ok(RepOutcome {
                psi_hat: est.psi_hat,
                se: est.se,
                covered: est.covers(cfg.psi_true, alpha),
                score_se: None,
            })
        }
        EstimatorKind::Hdbr => run_hdbr(data, cfg, opts, rep_seed),
    }
}

fn run_hdbr(
    data: &Dataset,
    cfg: &DgpConfig,
    opts: &McOptions,
    rep_seed: u64,
) -> Result<RepOutcome, SimError> {
    let ci_cfg = CiConfig {
        link: LinkFunction::Identity,
        alpha: opts.alpha,
        cv_folds: opts.cv_folds,
        n_lambda: opts.n_lambda,
        seed: rep_seed,
        ..CiConfig::default()
    };
    let problem = UnivariateScoreProblem::assemble(data, &ci_cfg)
        .map_err(|e| SimError::ReplicationFailed { what: format!("assembly: {e}") })?;
    let analysis = invert_ci_with_problem(data, &ci_cfg, None, &problem)
        .map_err(|e| SimError::ReplicationFailed { what: format!("inversion: {e}") })?;

    let covered = match &analysis.outcome {
        CiOutcome::Interval(ci) => ci.contains(cfg.psi_true),
        CiOutcome::Empty { .. } => false,
    };
    let psi_hat = analysis.outcome.psi_hat();

    // Standard-error columns, evaluated with ψ held at the true value: the
    // sample SE of the score, and its delta-method translation to the
    // estimator scale through the slope of the mean score.
    let eval = problem
        .evaluate(cfg.psi_true, None)
        .map_err(|e| SimError::ReplicationFailed { what: format!("at-truth score: {e}") })?;
    let n = data.n() as f64;
    let score_se = (eval.evaluation.vhat[[0, 0]] / n).sqrt();
    let slope = {
        // dU_i/dψ = (A_i − π̂_i) dH_i/dψ with dH/dψ = −A (identity link).
        let mut acc = 0.0;
        for i in 0..data.n() {
            acc += (data.a[i] - problem.propensity.pi_hat[i]) * (-data.a[i]);
        }
        (acc / n).abs()
    };
    let se = if slope > 1e-12 { score_se / slope } else { f64::NAN };
    if !se.is_finite() {
        return Err(SimError::ReplicationFailed { what: "degenerate score slope".into() });
    }
    Ok(RepOutcome { psi_hat, se, covered, score_se: Some(score_se) })
}

/// Runs the Monte Carlo study. Per-replication seeds derive from
/// `cfg.seed`; rows aggregate only successful replications, with failure
/// counts reported and the whole report flagged above 5% failures.
pub fn run_monte_carlo(
    cfg: &DgpConfig,
    estimators: &[EstimatorKind],
    opts: &McOptions,
) -> Result<SimulationReport, SimError> {
    if opts.replications == 0 {
        return Err(SimError::BadConfig { what: "replications must be >= 1".into() });
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(SimError::BadConfig { what: "alpha must be in (0,1)".into() });
    }
    let sampler = DgpSampler::new(cfg.clone())?;

    let run_all = |r: usize| -> Vec<Option<RepOutcome>> {
        let rep_seed = seeding::derive(cfg.seed, seeding::salt::REPLICATION, r as u64);
        let data = sampler.generate(rep_seed);
        estimators
            .iter()
            .map(|&kind| run_estimator(kind, &data, cfg, opts, rep_seed).ok())
            .collect()
    };

    let per_rep: Vec<Vec<Option<RepOutcome>>> = match opts.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| SimError::BadConfig { what: format!("thread pool: {e}") })?;
            pool.install(|| {
                use rayon::prelude::*;
                (0..opts.replications).into_par_iter().map(run_all).collect()
            })
        }
        None => {
            use rayon::prelude::*;
            (0..opts.replications).into_par_iter().map(run_all).collect()
        }
    };

    let mut rows = Vec::with_capacity(estimators.len());
    let mut flagged = false;
    for (e_idx, &kind) in estimators.iter().enumerate() {
        let outcomes: Vec<&RepOutcome> =
            per_rep.iter().filter_map(|r| r[e_idx].as_ref()).collect();
        let failures = opts.replications - outcomes.len();
        if failures * 20 > opts.replications {
            flagged = true;
        }
        let k = outcomes.len().max(1) as f64;
        let mean_psi = outcomes.iter().map(|o| o.psi_hat).sum::<f64>() / k;
        let bias = mean_psi - cfg.psi_true;
        let var = if outcomes.len() > 1 {
            outcomes.iter().map(|o| (o.psi_hat - mean_psi).powi(2)).sum::<f64>()
                / (outcomes.len() as f64 - 1.0)
        } else {
            0.0
        };
        let mean_se = outcomes.iter().map(|o| o.se).sum::<f64>() / k;
        let coverage =
            outcomes.iter().filter(|o| o.covered).count() as f64 / k * 100.0;
        let score_se10 = if matches!(kind, EstimatorKind::Hdbr) && !outcomes.is_empty() {
            Some(outcomes.iter().filter_map(|o| o.score_se).sum::<f64>() / k * 10.0)
        } else {
            None
        };
        rows.push(EstimatorSummary {
            estimator: kind,
            bias10: bias * 10.0,
            mcsd10: var.sqrt() * 10.0,
            mean_se10: mean_se * 10.0,
            coverage100: coverage,
            score_se10,
            replications: outcomes.len(),
            failures,
        });
    }

    Ok(SimulationReport {
        config: cfg.clone(),
        alpha: opts.alpha,
        requested: opts.replications,
        rows,
        flagged,
    })
}
