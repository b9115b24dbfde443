//! Fast self-check suite behind the CLI `check` subcommand: KKT
//! certificates, the bias-reduction certificate, interval nesting and
//! determinism, on small synthetic problems.

use crate::design::ObservationWeights;
use crate::inversion::{invert_ci, CiConfig, CiOutcome};
use crate::nuisance::estimate_outcome_nuisance;
use crate::score::EffectParameter;
use crate::sim::{emit_report, run_monte_carlo, DgpConfig, EstimatorKind, Experiment, McOptions, ReportFormat};
use crate::solvers::fit_weighted_lasso;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Runs the invariant suite; every check is deterministic given `seed`.
pub fn run_self_check(seed: u64) -> Vec<CheckResult> {
    vec![
        kkt_certificates(seed),
        bias_reduction_certificates(seed ^ 0x5bd1),
        interval_nesting(seed ^ 0x9ac3),
        determinism(seed ^ 0x1f7a),
    ]
}

fn random_problem(
    rng: &mut ChaCha8Rng,
    n: usize,
    p_cov: usize,
) -> (crate::design::DesignMatrix, Vec<f64>, ObservationWeights) {
    let cov = Array2::from_shape_fn((n, p_cov), |_| rng.gen_range(-1.5..1.5));
    let x = crate::design::DesignMatrix::with_intercept(&cov).unwrap();
    let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let w =
        ObservationWeights::new(Array1::from_shape_fn(n, |_| rng.gen_range(0.02..0.25))).unwrap();
    (x, y, w)
}

fn kkt_certificates(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    let mut failures = 0usize;
    for _ in 0..30 {
        let n = rng.gen_range(20..60);
        let p_cov = rng.gen_range(3..12);
        let (x, y, w) = random_problem(&mut rng, n, p_cov);
        let lambda = rng.gen_range(0.005..0.2);
        match fit_weighted_lasso(&x, &y, &w, lambda) {
            Ok(fit) if fit.converged && fit.kkt_gap <= 1e-6 => worst = worst.max(fit.kkt_gap),
            _ => failures += 1,
        }
    }
    CheckResult {
        name: "solver KKT certificates",
        pass: failures == 0,
        detail: format!("30 fits, {failures} failures, worst gap {worst:.2e}"),
    }
}

fn bias_reduction_certificates(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_ratio = 0.0_f64;
    let mut failures = 0usize;
    for _ in 0..30 {
        let n = rng.gen_range(25..70);
        let p_cov = rng.gen_range(3..15);
        let (x, h, w) = random_problem(&mut rng, n, p_cov);
        let lambda = rng.gen_range(0.01..0.3);
        match estimate_outcome_nuisance(&x, &h, &w, lambda, None, EffectParameter::scalar(0.0)) {
            Ok(fit) => {
                let ratio = fit.bias_gap / lambda;
                worst_ratio = worst_ratio.max(ratio);
                if ratio > 1.0 + 1e-6 {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    CheckResult {
        name: "bias-reduction certificate (gap <= lambda)",
        pass: failures == 0,
        detail: format!("30 fits, {failures} failures, worst gap/lambda {worst_ratio:.6}"),
    }
}

fn interval_nesting(seed: u64) -> CheckResult {
    let cfg = DgpConfig::new(Experiment::One, 80, 12, 1.0, 2.0, seed);
    let data = match crate::sim::generate_dataset(&cfg) {
        Ok(d) => d,
        Err(e) => {
            return CheckResult {
                name: "interval nesting",
                pass: false,
                detail: format!("dgp failed: {e}"),
            }
        }
    };
    let mut intervals = Vec::new();
    for alpha in [0.10, 0.05, 0.01] {
        let ci_cfg = CiConfig { alpha, cv_folds: 5, n_lambda: 40, seed, ..CiConfig::default() };
        match invert_ci(&data, &ci_cfg, None) {
            Ok(analysis) => match analysis.outcome {
                CiOutcome::Interval(ci) => intervals.push((alpha, ci.lower, ci.upper)),
                CiOutcome::Empty { .. } => {
                    return CheckResult {
                        name: "interval nesting",
                        pass: false,
                        detail: format!("empty interval at alpha {alpha}"),
                    }
                }
            },
            Err(e) => {
                return CheckResult {
                    name: "interval nesting",
                    pass: false,
                    detail: format!("inversion failed at alpha {alpha}: {e}"),
                }
            }
        }
    }
    let tol = 2e-4;
    let mut pass = true;
    for pair in intervals.windows(2) {
        let (_, lo_w, hi_w) = pair[0];
        let (_, lo_n, hi_n) = pair[1];
        if lo_n < lo_w - tol || hi_n > hi_w + tol {
            pass = false;
        }
    }
    CheckResult {
        name: "interval nesting",
        pass,
        detail: intervals
            .iter()
            .map(|(a, l, u)| format!("alpha {a}: [{l:.4}, {u:.4}]"))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn determinism(seed: u64) -> CheckResult {
    let cfg = DgpConfig::new(Experiment::One, 60, 8, 1.0, 2.0, seed);
    let opts = McOptions { replications: 4, alpha: 0.05, cv_folds: 4, n_lambda: 25, threads: None };
    let estimators = [EstimatorKind::NaiveLasso, EstimatorKind::Po];
    let run = || -> Result<String, crate::sim::SimError> {
        let report = run_monte_carlo(&cfg, &estimators, &opts)?;
        Ok(emit_report(&report, ReportFormat::Csv))
    };
    match (run(), run()) {
        (Ok(a), Ok(b)) if a == b => CheckResult {
            name: "seeded determinism",
            pass: true,
            detail: "two runs produced identical report bytes".into(),
        },
        (Ok(_), Ok(_)) => CheckResult {
            name: "seeded determinism",
            pass: false,
            detail: "reports differ between runs".into(),
        },
        (Err(e), _) | (_, Err(e)) => CheckResult {
            name: "seeded determinism",
            pass: false,
            detail: format!("run failed: {e}"),
        },
    }
}
