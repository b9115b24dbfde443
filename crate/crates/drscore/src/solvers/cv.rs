//! K-fold cross-validation over a decreasing penalty grid with warm-started
//! path fits. Fold assignment is a pure function of the seed.

use super::cd::{CdOptions, PreparedCd};
use super::logistic::PreparedLogistic;
use super::{clamp_prob, expit, Family, SolverError};
use crate::design::{DesignMatrix, ObservationWeights};
use crate::seeding;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Cross-validation specification: fold count, strictly decreasing penalty
/// grid, and the fold-assignment seed.
#[derive(Debug, Clone)]
pub struct CvSpec {
    pub folds: usize,
    pub lambda_grid: Vec<f64>,
    pub rng_seed: u64,
}

impl CvSpec {
    pub fn new(folds: usize, lambda_grid: Vec<f64>, rng_seed: u64) -> Self {
        Self { folds, lambda_grid, rng_seed }
    }

    pub fn validate(&self, n: usize) -> Result<(), SolverError> {
        if self.folds < 2 {
            return Err(SolverError::BadCvSpec { what: "folds must be >= 2" });
        }
        if self.folds > n {
            return Err(SolverError::BadCvSpec { what: "folds must be <= n" });
        }
        if self.lambda_grid.is_empty() {
            return Err(SolverError::BadCvSpec { what: "lambda grid must be nonempty" });
        }
        if self.lambda_grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(SolverError::BadCvSpec { what: "lambda grid must be positive and finite" });
        }
        if self.lambda_grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(SolverError::BadCvSpec { what: "lambda grid must be strictly decreasing" });
        }
        Ok(())
    }
}

/// `count` log-spaced values from `lambda_max` down to
/// `min_ratio * lambda_max`, strictly decreasing.
pub fn default_lambda_grid(lambda_max: f64, count: usize, min_ratio: f64) -> Vec<f64> {
    assert!(lambda_max > 0.0 && min_ratio > 0.0 && min_ratio < 1.0 && count >= 2);
    let log_max = lambda_max.ln();
    let log_min = (lambda_max * min_ratio).ln();
    (0..count)
        .map(|i| (log_max + (log_min - log_max) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Outcome of a cross-validation run.
#[derive(Debug, Clone)]
pub struct CvResult {
    /// The selected penalty: the smallest grid value attaining the minimum
    /// mean out-of-fold loss.
    pub lambda: f64,
    /// Mean out-of-fold loss per grid value (pooled over observations,
    /// weighted for the weighted-Gaussian family).
    pub mean_losses: Vec<f64>,
    /// Whether the fold assignment had to be redrawn once because a fold's
    /// training data contained a single class.
    pub refolded: bool,
}

/// Deterministic fold labels for `n` observations: a seeded shuffle dealt
/// round-robin into `k` folds.
pub fn fold_labels(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut labels = vec![0usize; n];
    for (pos, &i) in idx.iter().enumerate() {
        labels[i] = pos % k;
    }
    labels
}

/// Selects the penalty minimizing mean out-of-fold loss (squared error for
/// the Gaussian families, negative log-likelihood for logistic). For the
/// weighted-Gaussian family the held-out loss is the w-weighted mean of
/// squared residuals. Deterministic given the seed.
pub fn cross_validate(
    x: &DesignMatrix,
    y: &[f64],
    family: Family,
    w: Option<&ObservationWeights>,
    spec: &CvSpec,
) -> Result<CvResult, SolverError> {
    cross_validate_with_penalty_factors(x, y, family, w, spec, None)
}

/// As [`cross_validate`], with optional extra unpenalized columns (penalty
/// factor 0) beyond the intercept. `factors[j]` scales the grid value for
/// column j.
pub(crate) fn cross_validate_with_penalty_factors(
    x: &DesignMatrix,
    y: &[f64],
    family: Family,
    w: Option<&ObservationWeights>,
    spec: &CvSpec,
    factors: Option<&[f64]>,
) -> Result<CvResult, SolverError> {
    let n = x.n();
    spec.validate(n)?;
    if y.len() != n {
        return Err(SolverError::DimensionMismatch { what: "response", got: y.len(), expected: n });
    }
    if matches!(family, Family::Logistic) {
        super::check_binary(y, n)?;
    }
    let unit;
    let weights = match (family, w) {
        (Family::WeightedGaussian, Some(w)) => w,
        (Family::WeightedGaussian, None) => {
            return Err(SolverError::BadCvSpec { what: "weighted family requires weights" })
        }
        (_, _) => {
            unit = ObservationWeights::unit(n);
            &unit
        }
    };
    if weights.len() != n {
        return Err(SolverError::DimensionMismatch {
            what: "weights",
            got: weights.len(),
            expected: n,
        });
    }

    let mut labels = fold_labels(n, spec.folds, spec.rng_seed);
    let mut refolded = false;
    if matches!(family, Family::Logistic) {
        if !folds_have_both_classes(y, &labels, spec.folds) {
            labels = fold_labels(
                n,
                spec.folds,
                seeding::derive(spec.rng_seed, seeding::salt::CV_REFOLD, 1),
            );
            refolded = true;
            if !folds_have_both_classes(y, &labels, spec.folds) {
                return Err(SolverError::SingleClassFold);
            }
        }
    }

    let n_lambda = spec.lambda_grid.len();

    // Folds evaluate independently (possibly in parallel); accumulating in
    // fold order keeps the result identical to sequential execution.
    let fold_losses: Vec<(Vec<f64>, Vec<f64>)> = {
        use rayon::prelude::*;
        (0..spec.folds)
            .into_par_iter()
            .map(|fold| {
                let mut loss_acc = vec![0.0_f64; n_lambda];
                let mut denom_acc = vec![0.0_f64; n_lambda];
                let train: Vec<usize> = (0..n).filter(|&i| labels[i] != fold).collect();
                let held: Vec<usize> = (0..n).filter(|&i| labels[i] == fold).collect();
                if held.is_empty() {
                    return (loss_acc, denom_acc);
                }
                let x_train = x.subset_rows(&train);
                let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
                let w_train: Vec<f64> = train.iter().map(|&i| weights.as_slice()[i]).collect();

                let path =
                    fit_path(&x_train, &y_train, &w_train, family, &spec.lambda_grid, factors);

                for (li, beta) in path.iter().enumerate() {
                    for &i in &held {
                        let mut eta = 0.0;
                        for (j, &bj) in beta.iter().enumerate() {
                            if bj != 0.0 {
                                eta += bj * x.column_slice(j)[i];
                            }
                        }
                        match family {
                            Family::Gaussian | Family::WeightedGaussian => {
                                let wi = weights.as_slice()[i];
                                let r = y[i] - eta;
                                loss_acc[li] += wi * r * r;
                                denom_acc[li] += wi;
                            }
                            Family::Logistic => {
                                let p = clamp_prob(expit(eta));
                                loss_acc[li] +=
                                    -(y[i] * p.ln() + (1.0 - y[i]) * (1.0 - p).ln());
                                denom_acc[li] += 1.0;
                            }
                        }
                    }
                }
                (loss_acc, denom_acc)
            })
            .collect()
    };
    let mut loss_acc = vec![0.0_f64; n_lambda];
    let mut denom_acc = vec![0.0_f64; n_lambda];
    for (l, d) in &fold_losses {
        for i in 0..n_lambda {
            loss_acc[i] += l[i];
            denom_acc[i] += d[i];
        }
    }

    let mean_losses: Vec<f64> =
        loss_acc.iter().zip(&denom_acc).map(|(&l, &d)| l / d.max(1.0)).collect();
    // Smallest lambda among minimizers: later (smaller) grid entries win ties.
    let mut best = 0usize;
    for (i, &loss) in mean_losses.iter().enumerate() {
        if loss <= mean_losses[best] {
            best = i;
        }
    }
    Ok(CvResult { lambda: spec.lambda_grid[best], mean_losses, refolded })
}

fn folds_have_both_classes(y: &[f64], labels: &[usize], k: usize) -> bool {
    for fold in 0..k {
        let (mut zero, mut one) = (false, false);
        for (i, &l) in labels.iter().enumerate() {
            if l != fold {
                if y[i] == 0.0 {
                    zero = true;
                } else {
                    one = true;
                }
            }
        }
        if !(zero && one) {
            return false;
        }
    }
    true
}

/// Warm-started coefficient path over a decreasing grid. Fold fits only
/// feed the out-of-fold loss ranking, so they run at relaxed tolerances;
/// the fit returned at the selected penalty still uses the tight defaults.
pub(crate) fn fit_path(
    x: &DesignMatrix,
    y: &[f64],
    w: &[f64],
    family: Family,
    grid: &[f64],
    factors: Option<&[f64]>,
) -> Vec<Vec<f64>> {
    let p = x.p();
    let base: Vec<f64> = match factors {
        Some(f) => f.to_vec(),
        None => {
            let mut f = vec![1.0; p];
            f[x.intercept_column()] = 0.0;
            f
        }
    };
    // Stopping rule relative to the response scale: deep in the
    // saturated tail of the path (p > n) exact convergence costs thousands
    // of sweeps and cannot change the loss ranking.
    let nf = x.n() as f64;
    let scale = match family {
        Family::Logistic => 1.0,
        _ => {
            let sw: f64 = w.iter().sum();
            let ybar: f64 = y.iter().zip(w).map(|(&yi, &wi)| yi * wi).sum::<f64>() / sw.max(1e-12);
            (y.iter().zip(w).map(|(&yi, &wi)| wi * (yi - ybar) * (yi - ybar)).sum::<f64>()
                / sw.max(1e-12))
            .sqrt()
            .max(1e-12)
        }
    };
    let _ = nf;
    let opts = CdOptions {
        tol_coef: (1e-4 * scale).max(1e-7),
        tol_kkt: f64::INFINITY,
        max_sweeps: 150,
        ..CdOptions::default()
    };
    let mut path = Vec::with_capacity(grid.len());
    let mut warm: Option<Vec<f64>> = None;
    match family {
        Family::Gaussian | Family::WeightedGaussian => {
            let prepared = PreparedCd::new(x, w, None, opts);
            for &lambda in grid {
                let penalty: Vec<f64> = base.iter().map(|&f| f * lambda).collect();
                let sol = prepared.solve(y, &penalty, warm.as_deref());
                warm = Some(sol.beta.clone());
                path.push(sol.beta);
            }
        }
        Family::Logistic => {
            let prepared = PreparedLogistic::new(x, y, &opts);
            for &lambda in grid {
                let penalty: Vec<f64> = base.iter().map(|&f| f * lambda).collect();
                let sol = prepared.solve(&penalty, warm.as_deref());
                warm = Some(sol.beta.clone());
                path.push(sol.beta);
            }
        }
    }
    path
}
