//! IRLS outer loop for the L1-penalized logistic likelihood. Each iteration
//! builds the working response/weights at the current coefficients and
//! solves the quadratic subproblem with the coordinate-descent engine;
//! step-halving keeps the penalized objective monotone.
//!
//! The column preparation (canonical row order, standardization) happens
//! once per design in [`PreparedLogistic`] and is reused across penalty
//! values and IRLS iterations; only the working weights change.

use super::cd::{canonical_rows, CdOptions, CdSolution, PreparedCd};
use super::{clamp_prob, expit};
use crate::design::DesignMatrix;

const MAX_OUTER: usize = 100;
const MAX_HALVINGS: usize = 20;

/// A design prepared for repeated penalized logistic fits.
pub(crate) struct PreparedLogistic {
    prepared: PreparedCd,
    /// Response in canonical row order.
    a: Vec<f64>,
    opts: CdOptions,
    n: usize,
    p: usize,
    intercept: usize,
    a_bar: f64,
}

impl PreparedLogistic {
    pub fn new(x: &DesignMatrix, a: &[f64], opts: &CdOptions) -> Self {
        let (n, p) = (x.n(), x.p());
        assert_eq!(a.len(), n);
        // Canonicalize once here (keyed on the response); the inner
        // preparation then keeps the given order.
        let (order, ac): (Vec<usize>, Vec<f64>) = if opts.canonicalize {
            let order = canonical_rows(x, a);
            let ac = order.iter().map(|&i| a[i]).collect();
            (order, ac)
        } else {
            ((0..n).collect(), a.to_vec())
        };
        let xc = x.subset_rows(&order);
        let unit = vec![1.0; n];
        let inner_opts = CdOptions { canonicalize: false, record_objective: false, ..opts.clone() };
        let prepared = PreparedCd::new(&xc, &unit, None, inner_opts);
        let a_bar = ac.iter().sum::<f64>() / n as f64;
        Self { prepared, a: ac, opts: opts.clone(), n, p, intercept: x.intercept_column(), a_bar }
    }

    /// Linear predictor in canonical order at raw-scale coefficients.
    fn eta(&self, gamma: &[f64]) -> Vec<f64> {
        self.prepared.raw_eta(gamma)
    }

    fn objective(&self, gamma: &[f64], penalty: &[f64]) -> f64 {
        let eta = self.eta(gamma);
        let mut nll = 0.0;
        for (i, &e) in eta.iter().enumerate() {
            // log(1+exp(e)) - a*e, computed stably.
            nll += e.max(0.0) + (-e.abs()).exp().ln_1p() - self.a[i] * e;
        }
        let pen: f64 = gamma.iter().zip(penalty).map(|(&g, &l)| l * g.abs()).sum();
        nll / self.n as f64 + pen
    }

    fn kkt(&self, gamma: &[f64], penalty: &[f64]) -> f64 {
        let eta = self.eta(gamma);
        let resid: Vec<f64> = (0..self.n).map(|i| self.a[i] - expit(eta[i])).collect();
        self.prepared.raw_gradient_gap(&resid, gamma, penalty)
    }

    /// One penalized fit by IRLS with warm start.
    pub fn solve(&self, penalty: &[f64], warm: Option<&[f64]>) -> CdSolution {
        let mut gamma = vec![0.0; self.p];
        match warm {
            Some(g) => gamma.copy_from_slice(g),
            None => {
                let pb = clamp_prob(self.a_bar);
                gamma[self.intercept] = (pb / (1.0 - pb)).ln();
            }
        }

        let mut obj = self.objective(&gamma, penalty);
        let mut trace = self.opts.record_objective.then(|| vec![obj]);
        let mut total_sweeps = 0usize;
        let mut converged = false;
        let mut kkt = f64::INFINITY;
        // Loose internal fits (infinite KKT tolerance) accept on coefficient
        // stability and cap the outer iterations.
        let loose = self.opts.tol_kkt.is_infinite();
        let max_outer = if loose { 8 } else { MAX_OUTER };

        for _outer in 0..max_outer {
            let eta = self.eta(&gamma);
            let mut wq = vec![0.0; self.n];
            let mut z = vec![0.0; self.n];
            for i in 0..self.n {
                let pi = clamp_prob(expit(eta[i]));
                let wi = pi * (1.0 - pi);
                wq[i] = wi;
                z[i] = eta[i] + (self.a[i] - pi) / wi;
            }

            let sol = self.prepared.solve_with_weights(&z, &wq, penalty, Some(&gamma));
            total_sweeps += sol.iterations;

            let mut proposal = sol.beta;
            let mut new_obj = self.objective(&proposal, penalty);
            let mut halvings = 0;
            while new_obj > obj + 1e-12 && halvings < MAX_HALVINGS {
                for (pj, &gj) in proposal.iter_mut().zip(&gamma) {
                    *pj = 0.5 * (*pj + gj);
                }
                new_obj = self.objective(&proposal, penalty);
                halvings += 1;
            }
            if new_obj > obj + 1e-12 {
                // No descent available from the quadratic model; stop here.
                break;
            }

            let max_change = proposal
                .iter()
                .zip(&gamma)
                .map(|(&new, &old)| (new - old).abs())
                .fold(0.0, f64::max);
            gamma = proposal;
            obj = new_obj;
            if let Some(t) = trace.as_mut() {
                t.push(obj);
            }

            if loose {
                if max_change < self.opts.tol_coef {
                    kkt = 0.0;
                    converged = true;
                    break;
                }
            } else if max_change < self.opts.tol_coef {
                kkt = self.kkt(&gamma, penalty);
                if kkt <= self.opts.tol_kkt {
                    converged = true;
                    break;
                }
            }
        }
        if !converged {
            if loose {
                kkt = 0.0;
                converged = true;
            } else {
                kkt = self.kkt(&gamma, penalty);
                converged = kkt <= self.opts.tol_kkt;
            }
        }

        CdSolution {
            beta: gamma,
            iterations: total_sweeps,
            converged,
            kkt_gap: kkt,
            objective_trace: trace,
        }
    }
}
