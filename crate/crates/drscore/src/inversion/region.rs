//! Two-parameter confidence regions: mark the grid cells whose T² clears
//! the χ²₂ critical value and report per-axis profile intervals.

use super::InversionError;
use crate::score::ScoreEvaluation;
use crate::stats::chi2_crit_2;

/// A two-component score system evaluated at ψ = (ψ₁, ψ₂). Implementations
/// refit their outcome nuisances at each ψ.
pub trait ScoreSystem {
    fn evaluate(&mut self, psi: [f64; 2]) -> Result<ScoreEvaluation, InversionError>;
}

/// Rectangular search grid: `steps[j]` points per side around `center[j]`.
#[derive(Debug, Clone, Copy)]
pub struct Grid2Spec {
    pub center: [f64; 2],
    pub half_width: [f64; 2],
    pub steps: [usize; 2],
}

impl Grid2Spec {
    pub fn axis_values(&self, axis: usize) -> Vec<f64> {
        let m = self.steps[axis] as i64;
        let step = self.half_width[axis] / self.steps[axis] as f64;
        (-m..=m).map(|k| self.center[axis] + k as f64 * step).collect()
    }
}

/// Accepted region of a two-parameter inversion.
#[derive(Debug, Clone)]
pub struct Region2d {
    pub alpha: f64,
    pub critical: f64,
    pub psi1_values: Vec<f64>,
    pub psi2_values: Vec<f64>,
    /// T² per cell (row = ψ₁ index, column = ψ₂ index); None marks a failed
    /// evaluation.
    pub tsq: Vec<Vec<Option<f64>>>,
    /// Indices of accepted cells.
    pub accepted: Vec<(usize, usize)>,
    /// Per-axis extents of the accepted region; None when the region is
    /// empty.
    pub profile_psi1: Option<(f64, f64)>,
    pub profile_psi2: Option<(f64, f64)>,
    pub evaluations: usize,
    pub invalid: usize,
}

impl Region2d {
    pub fn is_empty(&self) -> bool {
        self.accepted.is_empty()
    }

    /// Accepted-cell argmin of T² (the grid point estimate), if any cell
    /// evaluated successfully.
    pub fn psi_hat(&self) -> Option<[f64; 2]> {
        let mut best: Option<(f64, [f64; 2])> = None;
        for (i, row) in self.tsq.iter().enumerate() {
            for (j, t) in row.iter().enumerate() {
                if let Some(t) = t {
                    if best.map_or(true, |(bt, _)| *t < bt) {
                        best = Some((*t, [self.psi1_values[i], self.psi2_values[j]]));
                    }
                }
            }
        }
        best.map(|(_, psi)| psi)
    }
}

/// Evaluates T² over the grid and marks cells with `tsq <= chi2_2(alpha)`.
/// Failed evaluations are excluded and counted. An empty accepted region is
/// reported as such (profiles = None), not an error.
pub fn invert_region_2d(
    system: &mut dyn ScoreSystem,
    alpha: f64,
    grid: &Grid2Spec,
) -> Result<Region2d, InversionError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(InversionError::BadAlpha { alpha });
    }
    let critical = chi2_crit_2(alpha);
    let psi1_values = grid.axis_values(0);
    let psi2_values = grid.axis_values(1);

    let mut tsq = vec![vec![None; psi2_values.len()]; psi1_values.len()];
    let mut accepted = Vec::new();
    let mut evaluations = 0usize;
    let mut invalid = 0usize;

    for (i, &p1) in psi1_values.iter().enumerate() {
        for (j, &p2) in psi2_values.iter().enumerate() {
            evaluations += 1;
            match system.evaluate([p1, p2]) {
                Ok(eval) => {
                    if eval.tsq <= critical {
                        accepted.push((i, j));
                    }
                    tsq[i][j] = Some(eval.tsq);
                }
                Err(InversionError::Nuisance(_)) | Err(InversionError::Score(_)) => {
                    invalid += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    let profile = |axis_values: &[f64], pick: &dyn Fn(&(usize, usize)) -> usize| {
        if accepted.is_empty() {
            None
        } else {
            let lo = accepted.iter().map(pick).min().unwrap();
            let hi = accepted.iter().map(pick).max().unwrap();
            Some((axis_values[lo], axis_values[hi]))
        }
    };
    let profile_psi1 = profile(&psi1_values, &|c| c.0);
    let profile_psi2 = profile(&psi2_values, &|c| c.1);

    Ok(Region2d {
        alpha,
        critical,
        psi1_values,
        psi2_values,
        tsq,
        accepted,
        profile_psi1,
        profile_psi2,
        evaluations,
        invalid,
    })
}
