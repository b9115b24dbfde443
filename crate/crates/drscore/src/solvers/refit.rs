//! Unpenalized refitting on a selected support: restricted least squares for
//! the Gaussian family, Newton-Raphson maximum likelihood for the logistic.

use super::{check_binary, clamp_prob, expit, Family, RefitFailure, SolverError};
use crate::design::DesignMatrix;
use crate::linalg;
use ndarray::{Array1, Array2};

const PIVOT_TOL: f64 = 1e-12;
const RCOND_TOL: f64 = 1e-10;
const GRAD_TOL: f64 = 1e-8;
const MAX_NEWTON: usize = 100;
/// A converged refit with a linear predictor beyond this magnitude is
/// treated as separated.
const ETA_LIMIT: f64 = 30.0;

/// Maximum likelihood / least squares on the support columns; zeros
/// elsewhere. The support must contain the intercept and have fewer columns
/// than observations.
pub fn refit_unpenalized(
    x: &DesignMatrix,
    y: &[f64],
    family: Family,
    support: &[usize],
) -> Result<Array1<f64>, SolverError> {
    let n = x.n();
    if y.len() != n {
        return Err(SolverError::DimensionMismatch { what: "response", got: y.len(), expected: n });
    }
    let mut support: Vec<usize> = support.to_vec();
    support.sort_unstable();
    support.dedup();
    if support.iter().any(|&j| j >= x.p()) {
        return Err(SolverError::BadSupport { what: "index out of range" });
    }
    if !support.contains(&x.intercept_column()) {
        return Err(SolverError::BadSupport { what: "support must include the intercept" });
    }
    if support.len() >= n {
        return Err(SolverError::BadSupport { what: "support size must be < n" });
    }
    match family {
        Family::Gaussian | Family::WeightedGaussian => refit_ols(x, y, &support),
        Family::Logistic => refit_logistic(x, y, &support),
    }
}

fn gather_columns<'a>(x: &'a DesignMatrix, support: &[usize]) -> Vec<&'a [f64]> {
    support.iter().map(|&j| x.column_slice(j)).collect()
}

fn refit_ols(x: &DesignMatrix, y: &[f64], support: &[usize]) -> Result<Array1<f64>, SolverError> {
    let n = x.n();
    let nf = n as f64;
    let k = support.len();
    let cols = gather_columns(x, support);

    let mut gram = Array2::<f64>::zeros((k, k));
    let mut xty = Array1::<f64>::zeros(k);
    for s in 0..k {
        for t in s..k {
            let v: f64 = cols[s].iter().zip(cols[t]).map(|(&a, &b)| a * b).sum::<f64>() / nf;
            gram[[s, t]] = v;
            gram[[t, s]] = v;
        }
        xty[s] = cols[s].iter().zip(y).map(|(&a, &yi)| a * yi).sum::<f64>() / nf;
    }
    let l = linalg::cholesky(&gram, PIVOT_TOL)
        .ok_or(SolverError::RefitFailed { reason: RefitFailure::Singular })?;
    if linalg::rcond_spd(&gram, &l) < RCOND_TOL {
        return Err(SolverError::RefitFailed { reason: RefitFailure::Singular });
    }
    let mut b = linalg::cholesky_solve(&l, &xty);

    // Iterative refinement until the support gradient clears the tolerance.
    for _ in 0..3 {
        let grad = support_gradient_ols(&cols, y, &b, n);
        if grad.iter().all(|g| g.abs() <= GRAD_TOL) {
            break;
        }
        let delta = linalg::cholesky_solve(&l, &Array1::from_vec(grad));
        b += &delta;
    }
    let grad = support_gradient_ols(&cols, y, &b, n);
    if grad.iter().any(|g| g.abs() > GRAD_TOL) {
        return Err(SolverError::RefitFailed { reason: RefitFailure::NoConvergence });
    }

    Ok(scatter(&b, support, x.p()))
}

fn support_gradient_ols(cols: &[&[f64]], y: &[f64], b: &Array1<f64>, n: usize) -> Vec<f64> {
    let nf = n as f64;
    let mut resid: Vec<f64> = y.to_vec();
    for (s, col) in cols.iter().enumerate() {
        let bs = b[s];
        if bs != 0.0 {
            for (ri, &xv) in resid.iter_mut().zip(*col) {
                *ri -= bs * xv;
            }
        }
    }
    cols.iter()
        .map(|col| col.iter().zip(&resid).map(|(&xv, &ri)| xv * ri).sum::<f64>() / nf)
        .collect()
}

fn refit_logistic(
    x: &DesignMatrix,
    a: &[f64],
    support: &[usize],
) -> Result<Array1<f64>, SolverError> {
    check_binary(a, x.n())?;
    let n = x.n();
    let nf = n as f64;
    let k = support.len();
    let cols = gather_columns(x, support);

    let mut b = Array1::<f64>::zeros(k);
    let a_bar = a.iter().sum::<f64>() / nf;
    let pb = clamp_prob(a_bar);
    let int_pos = support
        .iter()
        .position(|&j| j == x.intercept_column())
        .expect("support contains intercept");
    b[int_pos] = (pb / (1.0 - pb)).ln();

    let eta_of = |b: &Array1<f64>| -> Vec<f64> {
        let mut eta = vec![0.0; n];
        for (s, col) in cols.iter().enumerate() {
            let bs = b[s];
            if bs != 0.0 {
                for (e, &xv) in eta.iter_mut().zip(*col) {
                    *e += bs * xv;
                }
            }
        }
        eta
    };
    let nll = |eta: &[f64]| -> f64 {
        eta.iter()
            .zip(a)
            .map(|(&e, &ai)| e.max(0.0) + (-e.abs()).exp().ln_1p() - ai * e)
            .sum::<f64>()
            / nf
    };

    let mut eta = eta_of(&b);
    let mut obj = nll(&eta);
    let mut converged = false;

    for _ in 0..MAX_NEWTON {
        let probs: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
        let grad: Vec<f64> = cols
            .iter()
            .map(|col| {
                col.iter().zip(a.iter().zip(&probs)).map(|(&xv, (&ai, &pi))| xv * (ai - pi)).sum::<f64>()
                    / nf
            })
            .collect();
        if grad.iter().all(|g| g.abs() <= GRAD_TOL) {
            converged = true;
            break;
        }

        let mut hess = Array2::<f64>::zeros((k, k));
        for s in 0..k {
            for t in s..k {
                let v: f64 = cols[s]
                    .iter()
                    .zip(cols[t].iter().zip(&probs))
                    .map(|(&xs, (&xt, &pi))| {
                        let w = clamp_prob(pi) * (1.0 - clamp_prob(pi));
                        xs * xt * w
                    })
                    .sum::<f64>()
                    / nf;
                hess[[s, t]] = v;
                hess[[t, s]] = v;
            }
        }
        let l = linalg::cholesky(&hess, PIVOT_TOL)
            .ok_or(SolverError::RefitFailed { reason: RefitFailure::Singular })?;
        if linalg::rcond_spd(&hess, &l) < RCOND_TOL {
            return Err(SolverError::RefitFailed { reason: RefitFailure::Singular });
        }
        let step = linalg::cholesky_solve(&l, &Array1::from_vec(grad));

        // Backtracking on the negative log-likelihood.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &b + &(&step * scale);
            let eta_t = eta_of(&trial);
            let obj_t = nll(&eta_t);
            if obj_t <= obj + 1e-14 {
                b = trial;
                eta = eta_t;
                obj = obj_t;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !converged {
        // One more gradient check: backtracking may have stopped exactly at
        // the optimum.
        let probs: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
        let ok = cols.iter().all(|col| {
            let g: f64 = col
                .iter()
                .zip(a.iter().zip(&probs))
                .map(|(&xv, (&ai, &pi))| xv * (ai - pi))
                .sum::<f64>()
                / nf;
            g.abs() <= GRAD_TOL
        });
        if !ok {
            return Err(SolverError::RefitFailed { reason: RefitFailure::NoConvergence });
        }
    }
    if eta.iter().any(|&e| e.abs() > ETA_LIMIT) {
        return Err(SolverError::RefitFailed { reason: RefitFailure::Separation });
    }

    Ok(scatter(&b, support, x.p()))
}

fn scatter(b: &Array1<f64>, support: &[usize], p: usize) -> Array1<f64> {
    let mut full = Array1::zeros(p);
    for (s, &j) in support.iter().enumerate() {
        full[j] = b[s];
    }
    full
}
