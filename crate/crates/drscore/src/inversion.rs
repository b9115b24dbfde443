//! Confidence intervals by inverting the score test over a ψ grid, point
//! estimation by minimizing T², and two-parameter confidence regions.
//!
//! The exposure model is fitted once (it does not involve ψ); the outcome
//! nuisance is re-estimated at every ψ on the grid with warm starts. The
//! acceptance criterion at level α is
//! `[mean U(ψ)]² − (χ²₁(α)/n) V̂ ≤ 0`; the reported interval spans the
//! outermost sign changes, each refined by bisection, and the point
//! estimate is the grid argmin of T² refined by golden-section search.

use crate::design::Dataset;
use crate::nuisance::{
    estimate_propensity, select_lambda_beta, NuisanceError, PreparedOutcomeSolver, PropensityFit,
    PropensityOptions,
};
use crate::score::{
    test_statistic_with, transform_outcome, EffectParameter, LinkFunction, LogLinkForm,
    ScoreEvaluation, ScoreError, VarianceOptions,
};
use crate::sim::comparators::{estimate_partialling_out, PenaltyRule};
use crate::solvers::{default_lambda_grid, lambda_max_logistic, CvSpec, SolverError};
use crate::stats::chi2_crit_1;
use ndarray::Array2;

#[derive(Debug, thiserror::Error)]
pub enum InversionError {
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Extension(#[from] crate::extensions::ExtensionError),
    #[error("invalid grid: {what}")]
    BadGrid { what: &'static str },
    #[error("interval unbounded on grid after {expansions} expansions")]
    Unbounded { expansions: usize },
    #[error("no grid point produced a valid score evaluation")]
    AllPointsInvalid,
    #[error("alpha must be in (0,1), got {alpha}")]
    BadAlpha { alpha: f64 },
}

/// Search grid for the univariate inversion.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub center: f64,
    pub half_width: f64,
    pub step: f64,
    pub max_expansions: usize,
    pub refine_tol: f64,
}

impl GridSpec {
    pub fn new(
        center: f64,
        half_width: f64,
        step: f64,
        max_expansions: usize,
        refine_tol: f64,
    ) -> Result<Self, InversionError> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(InversionError::BadGrid { what: "half_width must be positive" });
        }
        if !(step > 0.0 && step < half_width) {
            return Err(InversionError::BadGrid { what: "step must satisfy 0 < step < half_width" });
        }
        if max_expansions < 1 {
            return Err(InversionError::BadGrid { what: "max_expansions must be >= 1" });
        }
        if !(refine_tol > 0.0) {
            return Err(InversionError::BadGrid { what: "refine_tol must be positive" });
        }
        Ok(Self { center, half_width, step, max_expansions, refine_tol })
    }

    /// The default grid: six pilot standard errors half-width, sixty steps
    /// per side, four expansions, 1e-4 refinement.
    pub fn default_around(center: f64, pilot_se: f64) -> Self {
        let half_width = (6.0 * pilot_se).max(1e-6);
        Self { center, half_width, step: half_width / 60.0, max_expansions: 4, refine_tol: 1e-4 }
    }
}

/// Pipeline configuration for [`invert_ci`].
#[derive(Debug, Clone)]
pub struct CiConfig {
    pub link: LinkFunction,
    pub log_form: LogLinkForm,
    pub alpha: f64,
    pub cv_folds: usize,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    /// Seed for cross-validation fold assignment.
    pub seed: u64,
    pub propensity: PropensityOptions,
    /// Use the centered variance estimate instead of the second moment.
    pub centered_variance: bool,
    /// Re-select λ_β by cross-validation at every grid ψ instead of holding
    /// the ψ = 0 selection fixed (grid × CV cost).
    pub reselect_lambda_per_psi: bool,
    /// Build the working weights from the penalized γ̂ rather than from the
    /// refit coefficients (the score's π̂ always follows the propensity
    /// options).
    pub weights_from_penalized: bool,
}

impl Default for CiConfig {
    fn default() -> Self {
        Self {
            link: LinkFunction::Identity,
            log_form: LogLinkForm::Exp,
            alpha: 0.05,
            cv_folds: 20,
            n_lambda: 100,
            lambda_min_ratio: 1e-2,
            seed: 0,
            propensity: PropensityOptions::default(),
            centered_variance: false,
            reselect_lambda_per_psi: false,
            weights_from_penalized: false,
        }
    }
}

/// Confidence interval from a successful inversion.
#[derive(Debug, Clone, Copy)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub psi_hat: f64,
    pub tsq_at_hat: f64,
    pub grid_evaluations: usize,
    pub expanded: usize,
}

impl ConfidenceInterval {
    pub fn contains(&self, psi: f64) -> bool {
        self.lower <= psi && psi <= self.upper
    }
}

/// Outcome of the inversion: an interval, or an explicitly empty confidence
/// set (T² exceeds the critical value everywhere on the grid).
#[derive(Debug, Clone)]
pub enum CiOutcome {
    Interval(ConfidenceInterval),
    Empty { psi_hat: f64, tsq_at_hat: f64, grid_evaluations: usize },
}

impl CiOutcome {
    pub fn interval(&self) -> Option<&ConfidenceInterval> {
        match self {
            CiOutcome::Interval(ci) => Some(ci),
            CiOutcome::Empty { .. } => None,
        }
    }

    pub fn psi_hat(&self) -> f64 {
        match self {
            CiOutcome::Interval(ci) => ci.psi_hat,
            CiOutcome::Empty { psi_hat, .. } => *psi_hat,
        }
    }
}

/// Full analysis record: the outcome plus pipeline diagnostics.
#[derive(Debug, Clone)]
pub struct CiAnalysis {
    pub outcome: CiOutcome,
    pub alpha: f64,
    pub lambda_gamma: f64,
    pub lambda_beta: f64,
    pub propensity_bumps: usize,
    pub pilot_center: f64,
    pub pilot_se: Option<f64>,
    /// All criterion roots detected on the final grid (refined).
    pub roots: Vec<f64>,
    /// Grid points whose nuisance fit failed (excluded from bracketing).
    pub invalid_points: usize,
}

/// One evaluated ψ: the outcome nuisance refit and the score statistics.
#[derive(Debug, Clone)]
pub struct PsiEvaluation {
    pub psi: f64,
    pub evaluation: ScoreEvaluation,
    pub beta: Vec<f64>,
    pub bias_gap: f64,
}

impl PsiEvaluation {
    pub fn tsq(&self) -> f64 {
        self.evaluation.tsq
    }
}

/// The univariate score problem with the ψ-independent pieces fixed:
/// fitted propensity, weights, and the outcome-nuisance penalty.
pub struct UnivariateScoreProblem<'a> {
    data: &'a Dataset,
    link: LinkFunction,
    log_form: LogLinkForm,
    variance: VarianceOptions,
    pub propensity: PropensityFit,
    pub lambda_beta: f64,
    solver: PreparedOutcomeSolver,
    a_col: Array2<f64>,
    pi_col: Array2<f64>,
}

impl<'a> UnivariateScoreProblem<'a> {
    /// Runs the ψ-independent pipeline: cross-validated propensity fit with
    /// ML refit, working weights, and λ_β selected at the null.
    pub fn assemble(data: &'a Dataset, cfg: &CiConfig) -> Result<Self, InversionError> {
        if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
            return Err(InversionError::BadAlpha { alpha: cfg.alpha });
        }
        let l = &data.design;
        let a = data.a.as_slice().expect("contiguous");

        let lmax_g = lambda_max_logistic(l, a).max(1e-10);
        let cv_gamma = CvSpec::new(
            cfg.cv_folds,
            default_lambda_grid(lmax_g, cfg.n_lambda, cfg.lambda_min_ratio),
            crate::seeding::derive(cfg.seed, crate::seeding::salt::CV_FOLDS, 0),
        );
        let propensity = estimate_propensity(l, a, &cv_gamma, &cfg.propensity)?;
        let weights = if cfg.weights_from_penalized {
            crate::score::compute_weights(
                l,
                propensity.penalized_fit.coefficients.as_slice().expect("contiguous"),
            )
        } else {
            propensity.weights()
        };

        // λ_β by weighted cross-validation under the null ψ = 0 (H(0) = Y).
        let y = data.y.as_slice().expect("contiguous");
        let lmax_b = crate::solvers::lambda_max_gaussian(l, y, &weights).max(1e-10);
        let cv_beta = CvSpec::new(
            cfg.cv_folds,
            default_lambda_grid(lmax_b, cfg.n_lambda, cfg.lambda_min_ratio),
            crate::seeding::derive(cfg.seed, crate::seeding::salt::CV_FOLDS, 1),
        );
        let lambda_beta = select_lambda_beta(l, y, &weights, &cv_beta)?;

        let solver = PreparedOutcomeSolver::new(l, &weights, None, lambda_beta)?;
        let n = data.n();
        let a_col = Array2::from_shape_fn((n, 1), |(i, _)| data.a[i]);
        let pi_col = Array2::from_shape_fn((n, 1), |(i, _)| propensity.pi_hat[i]);

        Ok(Self {
            data,
            link: cfg.link,
            log_form: cfg.log_form,
            variance: VarianceOptions { centered: cfg.centered_variance },
            propensity,
            lambda_beta,
            solver,
            a_col,
            pi_col,
        })
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    /// Evaluates the score system at one ψ, refitting the outcome nuisance.
    pub fn evaluate(&self, psi: f64, warm: Option<&[f64]>) -> Result<PsiEvaluation, InversionError> {
        let y = self.data.y.as_slice().expect("contiguous");
        let param = EffectParameter::scalar(psi);
        let h = transform_outcome(y, &self.a_col, &param, self.link, self.log_form)?;
        let fit = self.solver.solve(
            &self.data.design,
            h.as_slice().expect("contiguous"),
            param,
            warm,
        )?;
        let m_col = Array2::from_shape_fn((self.n(), 1), |(i, _)| fit.m_hat[i]);
        let scores = crate::score::score_vector(&h, &self.a_col, &self.pi_col, &m_col, None)?;
        let evaluation = test_statistic_with(&scores, self.variance)?;
        Ok(PsiEvaluation {
            psi,
            evaluation,
            beta: fit.beta_hat.to_vec(),
            bias_gap: fit.bias_gap,
        })
    }

    /// The Eq.-style acceptance criterion: negative inside the confidence
    /// set at level α.
    pub fn criterion_value(&self, eval: &PsiEvaluation, alpha: f64) -> f64 {
        let mean = eval.evaluation.mean[0];
        let vhat = eval.evaluation.vhat[[0, 0]];
        mean * mean - chi2_crit_1(alpha) / self.n() as f64 * vhat
    }

    /// Convenience: the criterion at an arbitrary ψ (cold start).
    pub fn criterion(&self, psi: f64, alpha: f64) -> Result<f64, InversionError> {
        let eval = self.evaluate(psi, None)?;
        Ok(self.criterion_value(&eval, alpha))
    }
}

struct GridPoint {
    psi: f64,
    criterion: f64,
    tsq: f64,
    beta: Vec<f64>,
}

struct GridState<'a, 'b> {
    problem: &'b UnivariateScoreProblem<'a>,
    alpha: f64,
    step: f64,
    center: f64,
    /// Evaluated points keyed by signed step index; `None` marks a nuisance
    /// failure at that ψ.
    points: std::collections::BTreeMap<i64, Option<GridPoint>>,
    evaluations: usize,
    invalid: usize,
}

impl<'a, 'b> GridState<'a, 'b> {
    fn psi_at(&self, k: i64) -> f64 {
        self.center + k as f64 * self.step
    }

    fn warm_near(&self, k: i64) -> Option<&[f64]> {
        let mut best: Option<(i64, &GridPoint)> = None;
        for (&kk, pt) in &self.points {
            if let Some(pt) = pt {
                let dist = (kk - k).abs();
                if best.map_or(true, |(d, _)| dist < d) {
                    best = Some((dist, pt));
                }
            }
        }
        best.map(|(_, pt)| pt.beta.as_slice())
    }

    fn eval_index(&mut self, k: i64) -> Result<(), InversionError> {
        if self.points.contains_key(&k) {
            return Ok(());
        }
        let psi = self.psi_at(k);
        let warm = self.warm_near(k).map(|b| b.to_vec());
        self.evaluations += 1;
        match self.problem.evaluate(psi, warm.as_deref()) {
            Ok(eval) => {
                let criterion = self.problem.criterion_value(&eval, self.alpha);
                self.points.insert(
                    k,
                    Some(GridPoint { psi, criterion, tsq: eval.tsq(), beta: eval.beta }),
                );
                Ok(())
            }
            Err(InversionError::Nuisance(_)) | Err(InversionError::Score(_)) => {
                // Failed point: excluded from bracketing, recorded.
                self.invalid += 1;
                self.points.insert(k, None);
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    fn eval_psi(&mut self, psi: f64, warm_from: i64) -> Result<(f64, f64, Vec<f64>), InversionError> {
        let warm = self.warm_near(warm_from).map(|b| b.to_vec());
        self.evaluations += 1;
        let eval = self.problem.evaluate(psi, warm.as_deref())?;
        let criterion = self.problem.criterion_value(&eval, self.alpha);
        Ok((criterion, eval.tsq(), eval.beta))
    }
}

/// Inverts the score test on a grid. `grid` defaults to a pilot-centered
/// [`GridSpec::default_around`] using the partialling-out estimate with a
/// plugin penalty (fallback: centered at 0 with a crude OLS-scale width).
pub fn invert_ci(
    data: &Dataset,
    cfg: &CiConfig,
    grid: Option<GridSpec>,
) -> Result<CiAnalysis, InversionError> {
    let problem = UnivariateScoreProblem::assemble(data, cfg)?;
    invert_ci_with_problem(data, cfg, grid, &problem)
}

/// As [`invert_ci`] but reusing an assembled problem (the simulation driver
/// also needs the problem for the at-truth standard error columns).
pub fn invert_ci_with_problem(
    data: &Dataset,
    cfg: &CiConfig,
    grid: Option<GridSpec>,
    problem: &UnivariateScoreProblem<'_>,
) -> Result<CiAnalysis, InversionError> {
    let (grid, pilot_center, pilot_se) = match grid {
        Some(g) => (g, g.center, None),
        None => {
            let (center, se) = pilot_estimate(data);
            (GridSpec::default_around(center, se), center, Some(se))
        }
    };

    let mut state = GridState {
        problem,
        alpha: cfg.alpha,
        step: grid.step,
        center: grid.center,
        points: std::collections::BTreeMap::new(),
        evaluations: 0,
        invalid: 0,
    };

    let m = (grid.half_width / grid.step).round().max(1.0) as i64;
    state.eval_index(0)?;
    for k in 1..=m {
        state.eval_index(k)?;
        state.eval_index(-k)?;
    }
    let mut lo_edge = -m;
    let mut hi_edge = m;

    // Expand each side until its outermost valid point has a nonnegative
    // criterion (so the outermost sign change is bracketed inside). A side
    // whose edge is already nonnegative stays put.
    let mut expanded = 0usize;
    loop {
        let needs_hi =
            outermost_valid(&state, hi_edge, -1, lo_edge).map_or(true, |(_, c)| c < 0.0);
        let needs_lo =
            outermost_valid(&state, lo_edge, 1, hi_edge).map_or(true, |(_, c)| c < 0.0);
        if !needs_hi && !needs_lo {
            break;
        }
        if expanded >= grid.max_expansions {
            return Err(InversionError::Unbounded { expansions: expanded });
        }
        expanded += 1;
        if needs_hi {
            let new_hi = hi_edge * 2;
            for k in (hi_edge + 1)..=new_hi {
                state.eval_index(k)?;
            }
            hi_edge = new_hi;
        }
        if needs_lo {
            let new_lo = lo_edge * 2;
            for k in (new_lo..lo_edge).rev() {
                state.eval_index(k)?;
            }
            lo_edge = new_lo;
        }
    }

    // Argmin of T² over valid points.
    let coarse = state
        .points
        .iter()
        .filter_map(|(&k, pt)| pt.as_ref().map(|p| (k, p.tsq)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let (k_hat, _) = coarse.ok_or(InversionError::AllPointsInvalid)?;

    // Golden-section refinement of the point estimate on [ψ̂ ± step].
    let (mut psi_hat, mut tsq_hat, mut crit_hat) = {
        let pt = state.points[&k_hat].as_ref().expect("valid argmin");
        (pt.psi, pt.tsq, pt.criterion)
    };
    {
        let (mut a, mut b) = (state.psi_at(k_hat) - grid.step, state.psi_at(k_hat) + grid.step);
        let inv_phi = 0.618_033_988_749_894_9_f64;
        let mut x1 = b - inv_phi * (b - a);
        let mut x2 = a + inv_phi * (b - a);
        let (mut c1, t1, _) = state.eval_psi(x1, k_hat)?;
        let (mut c2, t2, _) = state.eval_psi(x2, k_hat)?;
        let (mut f1, mut f2) = (t1, t2);
        let mut track = |psi: f64, tsq: f64, crit: f64| {
            if tsq < tsq_hat {
                psi_hat = psi;
                tsq_hat = tsq;
                crit_hat = crit;
            }
        };
        track(x1, f1, c1);
        track(x2, f2, c2);
        while b - a > grid.refine_tol {
            if f1 <= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                c2 = c1;
                x1 = b - inv_phi * (b - a);
                let (c, t, _) = state.eval_psi(x1, k_hat)?;
                f1 = t;
                c1 = c;
                track(x1, f1, c1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                c1 = c2;
                x2 = a + inv_phi * (b - a);
                let (c, t, _) = state.eval_psi(x2, k_hat)?;
                f2 = t;
                c2 = c;
                track(x2, f2, c2);
            }
        }
        let _ = (c1, c2);
    }

    // Empty confidence set: even the minimizer is rejected.
    if crit_hat >= 0.0 {
        return Ok(CiAnalysis {
            outcome: CiOutcome::Empty {
                psi_hat,
                tsq_at_hat: tsq_hat,
                grid_evaluations: state.evaluations,
            },
            alpha: cfg.alpha,
            lambda_gamma: problem.propensity.lambda_gamma,
            lambda_beta: problem.lambda_beta,
            propensity_bumps: problem.propensity.bumped,
            pilot_center,
            pilot_se,
            roots: Vec::new(),
            invalid_points: state.invalid,
        });
    }

    // All sign changes between consecutive valid grid points.
    let valid: Vec<(i64, f64, f64)> = state
        .points
        .iter()
        .filter_map(|(&k, pt)| pt.as_ref().map(|p| (k, p.psi, p.criterion)))
        .collect();
    let mut brackets: Vec<(f64, f64, i64)> = Vec::new();
    for pair in valid.windows(2) {
        let (ka, _psi_a, ca) = pair[0];
        let (_kb, _psi_b, cb) = pair[1];
        if (ca < 0.0) != (cb < 0.0) {
            brackets.push((pair[0].1, pair[1].1, ka));
        }
    }
    let mut roots = Vec::with_capacity(brackets.len());
    for &(lo, hi, near) in &brackets {
        roots.push(bisect_root(&mut state, lo, hi, grid.refine_tol, near)?);
    }
    roots.sort_by(f64::total_cmp);

    // Outermost sign changes define the reported interval.
    let lower = roots.iter().copied().filter(|&r| r <= psi_hat).fold(f64::NAN, f64::min);
    let upper = roots.iter().copied().filter(|&r| r >= psi_hat).fold(f64::NAN, f64::max);
    let (lower, upper) = match (lower.is_nan(), upper.is_nan()) {
        (false, false) => (lower, upper),
        // The criterion is negative at ψ̂ and nonnegative at both edges, so
        // roots exist on both sides of ψ̂ up to grid resolution; a missing
        // side can only come from roots landing exactly on ψ̂.
        _ => (roots.first().copied().unwrap_or(psi_hat), roots.last().copied().unwrap_or(psi_hat)),
    };

    Ok(CiAnalysis {
        outcome: CiOutcome::Interval(ConfidenceInterval {
            lower,
            upper,
            alpha: cfg.alpha,
            psi_hat,
            tsq_at_hat: tsq_hat,
            grid_evaluations: state.evaluations,
            expanded,
        }),
        alpha: cfg.alpha,
        lambda_gamma: problem.propensity.lambda_gamma,
        lambda_beta: problem.lambda_beta,
        propensity_bumps: problem.propensity.bumped,
        pilot_center,
        pilot_se,
        roots,
        invalid_points: state.invalid,
    })
}

/// Walks inward from `edge` in direction `dir` past invalid points to the
/// outermost valid one.
fn outermost_valid(state: &GridState, edge: i64, dir: i64, stop: i64) -> Option<(i64, f64)> {
    let mut k = edge;
    loop {
        match state.points.get(&k) {
            Some(Some(pt)) => return Some((k, pt.criterion)),
            _ => {
                if k == stop {
                    return None;
                }
                k += dir;
            }
        }
    }
}

fn bisect_root(
    state: &mut GridState,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    warm_from: i64,
) -> Result<f64, InversionError> {
    let (c_lo, _, _) = state.eval_psi(lo, warm_from)?;
    let lo_neg = c_lo < 0.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let (c_mid, _, _) = state.eval_psi(mid, warm_from)?;
        if (c_mid < 0.0) == lo_neg {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Pilot for the default grid: partialling out with a plugin penalty.
fn pilot_estimate(data: &Dataset) -> (f64, f64) {
    match estimate_partialling_out(data, PenaltyRule::Plugin, 0) {
        Ok(est) if est.se.is_finite() && est.se > 0.0 => (est.psi_hat, est.se),
        _ => {
            // Null-model OLS slope scale as a crude fallback.
            let n = data.n() as f64;
            let sd = |v: &[f64]| {
                let m = v.iter().sum::<f64>() / n;
                (v.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
            };
            let sy = sd(data.y.as_slice().unwrap());
            let sa = sd(data.a.as_slice().unwrap()).max(1e-6);
            (0.0, (sy / sa / n.sqrt()).max(1e-6))
        }
    }
}

pub mod region;
pub use region::{invert_region_2d, Grid2Spec, Region2d};
