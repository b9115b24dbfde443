//! The doubly robust score machinery: outcome transform H(ψ), per-observation
//! scores, the empirical variance estimate and the squared test statistic.

use crate::design::{DesignMatrix, ObservationWeights};
use crate::linalg;
use ndarray::{Array1, Array2};

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("dimension mismatch: {what} has shape {got}, expected {expected}")]
    DimensionMismatch { what: &'static str, got: String, expected: String },
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("degenerate score variance")]
    DegenerateVariance,
    #[error("need n > k observations, got n={n}, k={k}")]
    TooFewObservations { n: usize, k: usize },
}

/// Link function of the treatment-effect model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkFunction {
    Identity,
    Log,
}

/// Which log-link outcome transform to use. `Exp` is `H = Y ∘ exp(−Aψ)`,
/// the form that satisfies H(0) = Y and keeps the score mean-zero away from
/// the null; `Expit` is the `H = Y ∘ expit(−Aψ)` variant, kept for
/// consistency studies (it rescales Y by 1/2 at ψ = 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogLinkForm {
    #[default]
    Exp,
    Expit,
}

/// The effect parameter ψ (length 1 for the univariate model, 2 for the
/// extension systems).
#[derive(Debug, Clone, PartialEq)]
pub struct EffectParameter(Vec<f64>);

impl EffectParameter {
    pub fn new(psi: Vec<f64>) -> Self {
        assert!(!psi.is_empty() && psi.iter().all(|v| v.is_finite()));
        Self(psi)
    }

    pub fn scalar(psi: f64) -> Self {
        Self::new(vec![psi])
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Per-observation scores with their mean, second-moment matrix and squared
/// statistic.
#[derive(Debug, Clone)]
pub struct ScoreEvaluation {
    pub per_obs: Array2<f64>,
    pub mean: Vec<f64>,
    pub vhat: Array2<f64>,
    pub tsq: f64,
    pub dof: usize,
}

/// Outcome transform H(ψ).
///
/// Identity link: `H = Y − A_terms ψ`. Log link: `H = Y ∘ exp(−A_terms ψ)`
/// (or the expit variant for k = 1). At ψ = 0 the exp and identity forms
/// return Y exactly.
pub fn transform_outcome(
    y: &[f64],
    a_terms: &Array2<f64>,
    psi: &EffectParameter,
    link: LinkFunction,
    log_form: LogLinkForm,
) -> Result<Array1<f64>, ScoreError> {
    let n = y.len();
    if a_terms.nrows() != n || a_terms.ncols() != psi.k() {
        return Err(ScoreError::DimensionMismatch {
            what: "exposure terms",
            got: format!("{}x{}", a_terms.nrows(), a_terms.ncols()),
            expected: format!("{}x{}", n, psi.k()),
        });
    }
    let mut shift = vec![0.0; n];
    for (j, &pj) in psi.as_slice().iter().enumerate() {
        let col = a_terms.column(j);
        for (s, &av) in shift.iter_mut().zip(col.iter()) {
            *s += pj * av;
        }
    }
    let h = match link {
        LinkFunction::Identity => {
            Array1::from_shape_fn(n, |i| y[i] - shift[i])
        }
        LinkFunction::Log => match log_form {
            LogLinkForm::Exp => Array1::from_shape_fn(n, |i| y[i] * (-shift[i]).exp()),
            LogLinkForm::Expit => {
                Array1::from_shape_fn(n, |i| y[i] / (1.0 + shift[i].exp()))
            }
        },
    };
    Ok(h)
}

/// Per-observation score matrix: column j is
/// `modifier_ij (A_ij − π̂_ij)(H_i − m̂_ij)`.
pub fn score_vector(
    h: &Array1<f64>,
    a_terms: &Array2<f64>,
    pi_hat: &Array2<f64>,
    m_hat: &Array2<f64>,
    modifiers: Option<&Array2<f64>>,
) -> Result<Array2<f64>, ScoreError> {
    let (n, k) = (a_terms.nrows(), a_terms.ncols());
    let expected = format!("{n}x{k}");
    for (name, m) in [("fitted exposure means", pi_hat), ("fitted outcome means", m_hat)] {
        if m.nrows() != n || m.ncols() != k {
            return Err(ScoreError::DimensionMismatch {
                what: name,
                got: format!("{}x{}", m.nrows(), m.ncols()),
                expected: expected.clone(),
            });
        }
    }
    if let Some(z) = modifiers {
        if z.nrows() != n || z.ncols() != k {
            return Err(ScoreError::DimensionMismatch {
                what: "modifiers",
                got: format!("{}x{}", z.nrows(), z.ncols()),
                expected,
            });
        }
    }
    if h.len() != n {
        return Err(ScoreError::DimensionMismatch {
            what: "transformed outcome",
            got: format!("{}", h.len()),
            expected: format!("{n}"),
        });
    }
    let mut u = Array2::zeros((n, k));
    for j in 0..k {
        for i in 0..n {
            let z = modifiers.map_or(1.0, |m| m[[i, j]]);
            u[[i, j]] = z * (a_terms[[i, j]] - pi_hat[[i, j]]) * (h[i] - m_hat[[i, j]]);
        }
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(ScoreError::NonFinite { what: "scores" });
    }
    Ok(u)
}

/// Options for [`test_statistic_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct VarianceOptions {
    /// Center the scores before forming V̂ (default: the uncentered second
    /// moment, the object the validity argument controls).
    pub centered: bool,
}

/// Squared score statistic `T² = n Ūᵀ V̂⁻¹ Ū` with `V̂ = (1/n) Σ U_i U_iᵀ`.
pub fn test_statistic(scores: &Array2<f64>) -> Result<ScoreEvaluation, ScoreError> {
    test_statistic_with(scores, VarianceOptions::default())
}

pub fn test_statistic_with(
    scores: &Array2<f64>,
    opts: VarianceOptions,
) -> Result<ScoreEvaluation, ScoreError> {
    let (n, k) = (scores.nrows(), scores.ncols());
    if n <= k {
        return Err(ScoreError::TooFewObservations { n, k });
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(ScoreError::NonFinite { what: "scores" });
    }
    let nf = n as f64;
    let mean: Vec<f64> = (0..k).map(|j| scores.column(j).sum() / nf).collect();
    let mut vhat = Array2::zeros((k, k));
    for s in 0..k {
        for t in s..k {
            let mut acc = 0.0;
            for i in 0..n {
                let us = scores[[i, s]] - if opts.centered { mean[s] } else { 0.0 };
                let ut = scores[[i, t]] - if opts.centered { mean[t] } else { 0.0 };
                acc += us * ut;
            }
            vhat[[s, t]] = acc / nf;
            vhat[[t, s]] = vhat[[s, t]];
        }
    }

    // Reciprocal-condition guard before inverting.
    let tsq = match k {
        1 => {
            let v = vhat[[0, 0]];
            if v <= 0.0 || !v.is_finite() {
                return Err(ScoreError::DegenerateVariance);
            }
            nf * mean[0] * mean[0] / v
        }
        2 => {
            let (lo, hi) = linalg::eigvals_sym2(&vhat);
            if hi <= 0.0 || lo / hi < 1e-12 {
                return Err(ScoreError::DegenerateVariance);
            }
            let det = vhat[[0, 0]] * vhat[[1, 1]] - vhat[[0, 1]] * vhat[[0, 1]];
            let (m0, m1) = (mean[0], mean[1]);
            nf * (vhat[[1, 1]] * m0 * m0 - 2.0 * vhat[[0, 1]] * m0 * m1
                + vhat[[0, 0]] * m1 * m1)
                / det
        }
        _ => {
            let l = linalg::cholesky(&vhat, 1e-12).ok_or(ScoreError::DegenerateVariance)?;
            if linalg::rcond_spd(&vhat, &l) < 1e-12 {
                return Err(ScoreError::DegenerateVariance);
            }
            let sol = linalg::cholesky_solve(&l, &Array1::from_vec(mean.clone()));
            nf * mean.iter().zip(sol.iter()).map(|(&m, &s)| m * s).sum::<f64>()
        }
    };
    if !tsq.is_finite() {
        return Err(ScoreError::DegenerateVariance);
    }
    Ok(ScoreEvaluation { per_obs: scores.clone(), mean, vhat, tsq: tsq.max(0.0), dof: k })
}

/// Working weights `w_i = π̂_i (1 − π̂_i)` at `π̂ = expit(γᵀL)`, with the
/// probabilities clamped away from 0 and 1.
pub fn compute_weights(l: &DesignMatrix, gamma: &[f64]) -> ObservationWeights {
    let eta = l.linear_predictor(gamma);
    let w = eta.mapv(|e| {
        let p = crate::solvers::prob(e);
        p * (1.0 - p)
    });
    ObservationWeights::new(w).expect("clamped probabilities give valid weights")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn column(v: Vec<f64>) -> Array2<f64> {
        let n = v.len();
        Array2::from_shape_vec((n, 1), v).unwrap()
    }

    #[test]
    fn null_transform_returns_y_exactly() {
        let y = vec![3.0, -1.5, 0.25, 7.0];
        let a = column(vec![1.0, 0.0, 1.0, 0.0]);
        let psi = EffectParameter::scalar(0.0);
        for link in [LinkFunction::Identity, LinkFunction::Log] {
            let h = transform_outcome(&y, &a, &psi, link, LogLinkForm::Exp).unwrap();
            for (hi, yi) in h.iter().zip(&y) {
                assert_eq!(hi, yi);
            }
        }
    }

    #[test]
    fn identity_transform_direct_arithmetic() {
        let y = vec![3.0, 1.0];
        let a = column(vec![1.0, 0.0]);
        let h = transform_outcome(
            &y,
            &a,
            &EffectParameter::scalar(0.3),
            LinkFunction::Identity,
            LogLinkForm::Exp,
        )
        .unwrap();
        assert!((h[0] - 2.7).abs() < 1e-15);
        assert_eq!(h[1], 1.0);
    }

    #[test]
    fn log_transform_two_parameter_form() {
        // Y=2, A=1, Z=1, psi=(0.5,0.5): H = 2 exp(-1).
        let y = vec![2.0];
        let a = Array2::from_shape_vec((1, 2), vec![1.0, 1.0]).unwrap();
        let h = transform_outcome(
            &y,
            &a,
            &EffectParameter::new(vec![0.5, 0.5]),
            LinkFunction::Log,
            LogLinkForm::Exp,
        )
        .unwrap();
        assert!((h[0] - 2.0 * (-1.0_f64).exp()).abs() < 1e-12);
        assert!((h[0] - 0.735_758_882_342_884_7).abs() < 1e-12);
    }

    #[test]
    fn expit_variant_matches_its_definition() {
        let y = vec![2.0, 5.0];
        let a = column(vec![1.0, 0.0]);
        let psi = EffectParameter::scalar(0.4);
        let h =
            transform_outcome(&y, &a, &psi, LinkFunction::Log, LogLinkForm::Expit).unwrap();
        let expit = |x: f64| 1.0 / (1.0 + (-x).exp());
        assert!((h[0] - 2.0 * expit(-0.4)).abs() < 1e-14);
        assert!((h[1] - 5.0 * 0.5).abs() < 1e-14);
    }

    #[test]
    fn identity_reconstruction_is_exact() {
        let y = vec![1.5, -2.0, 0.75, 4.0];
        let a = column(vec![1.0, 1.0, 0.0, 0.0]);
        let psi = EffectParameter::scalar(0.7);
        let h =
            transform_outcome(&y, &a, &psi, LinkFunction::Identity, LogLinkForm::Exp).unwrap();
        for i in 0..4 {
            assert_eq!(h[i] + 0.7 * a[[i, 0]], y[i]);
        }
    }

    #[test]
    fn scores_annihilate_exact_residuals() {
        let h = array![2.0, 1.0, 3.0];
        let a = column(vec![1.0, 0.0, 1.0]);
        let pi_eq_a = a.clone();
        let m = column(vec![0.0, 0.5, 1.0]);
        let u = score_vector(&h, &a, &pi_eq_a, &m, None).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));

        let pi = column(vec![0.4, 0.5, 0.6]);
        let m_eq_h = column(h.to_vec());
        let u2 = score_vector(&h, &a, &pi, &m_eq_h, None).unwrap();
        assert!(u2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn score_direct_arithmetic() {
        let h = array![2.0, 1.0];
        let a = column(vec![1.0, 0.0]);
        let pi = column(vec![0.5, 0.25]);
        let m = column(vec![1.0, 1.0]);
        let u = score_vector(&h, &a, &pi, &m, None).unwrap();
        assert!((u[[0, 0]] - 0.5).abs() < 1e-15);
        assert_eq!(u[[1, 0]], 0.0);
    }

    #[test]
    fn constant_scores_give_tsq_n() {
        let u = column(vec![0.7; 12]);
        let eval = test_statistic(&u).unwrap();
        assert!((eval.vhat[[0, 0]] - 0.49).abs() < 1e-12);
        assert!((eval.tsq - 12.0).abs() < 1e-9);
    }

    #[test]
    fn alternating_scores_give_tsq_zero() {
        let u = column((0..10).map(|i| if i % 2 == 0 { 0.3 } else { -0.3 }).collect());
        let eval = test_statistic(&u).unwrap();
        assert!(eval.mean[0].abs() < 1e-15);
        assert!(eval.tsq.abs() < 1e-20);
    }

    #[test]
    fn all_zero_scores_are_degenerate() {
        let u = column(vec![0.0; 8]);
        assert!(matches!(test_statistic(&u), Err(ScoreError::DegenerateVariance)));
    }

    #[test]
    fn tsq_is_scale_invariant() {
        let u = column(vec![0.4, -0.2, 0.9, 0.1, -0.5, 0.3, 0.0, 0.7]);
        let base = test_statistic(&u).unwrap().tsq;
        for c in [3.0, -0.04, 1e6] {
            let scaled = u.mapv(|v| c * v);
            let t = test_statistic(&scaled).unwrap().tsq;
            assert!((t - base).abs() < 1e-10 * base.max(1.0), "c={c}: {t} vs {base}");
        }
    }

    #[test]
    fn vhat_is_positive_semidefinite() {
        let u = Array2::from_shape_vec(
            (6, 2),
            vec![0.3, -0.1, 0.5, 0.2, -0.4, 0.0, 0.1, 0.1, 0.9, -0.3, -0.2, 0.4],
        )
        .unwrap();
        let eval = test_statistic(&u).unwrap();
        let (lo, _) = crate::linalg::eigvals_sym2(&eval.vhat);
        assert!(lo >= -1e-10);
    }

    #[test]
    fn weights_from_gamma() {
        let cov = array![[0.0], [0.0], [0.0]];
        let l = DesignMatrix::with_intercept(&cov).unwrap();
        let w = compute_weights(&l, &[0.0, 0.0]);
        assert!(w.as_slice().iter().all(|&wi| (wi - 0.25).abs() < 1e-15));

        // gamma^T L = logit(0.9) gives w = 0.9 * 0.1.
        let logit09 = (0.9_f64 / 0.1).ln();
        let w2 = compute_weights(&l, &[logit09, 0.0]);
        assert!(w2.as_slice().iter().all(|&wi| (wi - 0.09).abs() < 1e-12));

        // Saturated predictor stays clamped away from zero.
        let w3 = compute_weights(&l, &[500.0, 0.0]);
        let floor = 1e-8 * (1.0 - 1e-8);
        assert!(w3.as_slice().iter().all(|&wi| wi >= floor * 0.999));
    }
}
