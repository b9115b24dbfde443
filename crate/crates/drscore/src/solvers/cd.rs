//! Cyclic coordinate descent for the weighted Lasso
//!
//!     min_beta (1/2n) sum_i w_i (y_i - beta^T x_i)^2 + sum_j penalty_j |beta_j|
//!
//! with per-column penalties (0 = unpenalized). Columns are internally
//! standardized to unit weighted standard deviation; the per-column penalty
//! is rescaled by 1/sd so the solved problem is exactly the raw-scale one
//! above, and coefficients are mapped back on exit.
//!
//! Observations are first sorted into a canonical order (a total order on
//! (y, w, row)), which makes every reduction independent of the caller's row
//! order: single-shot fits are bit-for-bit invariant under observation
//! permutations.
//!
//! Two solve entry points share the sweep machinery: [`PreparedCd::solve`]
//! uses the preparation weights (the intercept is profiled out exactly),
//! and [`PreparedCd::solve_with_weights`] solves under per-call weights on
//! the same prepared columns (the intercept becomes an explicit unpenalized
//! coordinate) — the IRLS inner loop, where the working weights change
//! every iteration.

use crate::design::DesignMatrix;

#[derive(Debug, Clone)]
pub(crate) struct CdOptions {
    pub standardize: bool,
    pub tol_coef: f64,
    pub tol_kkt: f64,
    pub max_sweeps: usize,
    pub record_objective: bool,
    pub canonicalize: bool,
}

impl Default for CdOptions {
    fn default() -> Self {
        Self {
            standardize: true,
            tol_coef: 1e-7,
            tol_kkt: 1e-6,
            max_sweeps: 10_000,
            record_objective: false,
            canonicalize: true,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CdSolution {
    pub beta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_gap: f64,
    pub objective_trace: Option<Vec<f64>>,
}

/// Problem data prepared once and reused across penalty values, transformed
/// outcomes and (for the IRLS inner loop) changing weights.
pub(crate) struct PreparedCd {
    n: usize,
    p: usize,
    intercept: usize,
    opts: CdOptions,
    /// Working columns, column-major, canonical row order, standardized
    /// when enabled (the intercept column stays raw ones).
    cols: Vec<f64>,
    w: Vec<f64>,
    /// (1/n) sum_i w_i x_ij^2 per working column at preparation weights.
    curvature: Vec<f64>,
    mu: Vec<f64>,
    sd: Vec<f64>,
    /// Columns with zero weighted variance are pinned at zero.
    dead: Vec<bool>,
    sum_w: f64,
    order: Vec<usize>,
}

impl PreparedCd {
    /// `key_response`: include this response in the canonical sort key.
    /// Single-fit entry points pass the response they will solve with, which
    /// makes ties in (w, row) harmless; reusable preparations (many
    /// responses, one design) pass `None` and are deterministic for a fixed
    /// input order.
    pub fn new(
        x: &DesignMatrix,
        w: &[f64],
        key_response: Option<&[f64]>,
        opts: CdOptions,
    ) -> Self {
        let (n, p) = (x.n(), x.p());
        assert_eq!(w.len(), n);
        let order = if opts.canonicalize {
            canonical_order(x, key_response, w)
        } else {
            (0..n).collect()
        };

        let w: Vec<f64> = order.iter().map(|&i| w[i]).collect();
        let sum_w: f64 = w.iter().sum();
        let nf = n as f64;

        let mut cols = vec![0.0; n * p];
        let mut mu = vec![0.0; p];
        let mut sd = vec![1.0; p];
        let mut dead = vec![false; p];
        let mut curvature = vec![0.0; p];
        for j in 0..p {
            let src = x.column_slice(j);
            let dst = &mut cols[j * n..(j + 1) * n];
            // Fused permutation copy and weighted moments (canonical order,
            // so the sums are row-order invariant).
            let (mut swx, mut swxx) = (0.0_f64, 0.0_f64);
            for (t, &i) in order.iter().enumerate() {
                let v = src[i];
                dst[t] = v;
                swx += w[t] * v;
                swxx += w[t] * v * v;
            }
            if opts.standardize && j != x.intercept_column() {
                let m = swx / sum_w;
                let var = swxx / sum_w - m * m;
                mu[j] = m;
                if var > 0.0 {
                    let s = var.sqrt();
                    sd[j] = s;
                    for v in dst.iter_mut() {
                        *v = (*v - m) / s;
                    }
                    // Unit weighted variance makes the curvature analytic.
                    curvature[j] = sum_w / nf;
                } else {
                    dead[j] = true;
                    for v in dst.iter_mut() {
                        *v = 0.0;
                    }
                }
            } else {
                curvature[j] = swxx / nf;
                if swxx == 0.0 && j != x.intercept_column() {
                    dead[j] = true;
                }
            }
        }

        Self {
            n,
            p,
            intercept: x.intercept_column(),
            opts,
            cols,
            w,
            curvature,
            mu,
            sd,
            dead,
            sum_w,
            order,
        }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.n..(j + 1) * self.n]
    }

    /// Linear predictor in canonical row order from internal coefficients
    /// (non-intercept internal b, explicit intercept coordinate c).
    fn internal_eta(&self, b: &[f64], c: f64) -> Vec<f64> {
        let mut eta = vec![c; self.n];
        for j in 0..self.p {
            if j == self.intercept || b[j] == 0.0 {
                continue;
            }
            let bj = b[j];
            for (e, &xv) in eta.iter_mut().zip(self.col(j)) {
                *e += bj * xv;
            }
        }
        eta
    }

    /// Linear predictor in canonical row order at raw-scale coefficients.
    pub fn raw_eta(&self, gamma: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.p];
        let mut c = gamma[self.intercept];
        for j in 0..self.p {
            if j == self.intercept {
                continue;
            }
            b[j] = gamma[j] * self.sd[j];
            c += gamma[j] * self.mu[j];
        }
        self.internal_eta(&b, c)
    }

    /// Sup-norm violation of `(1/n) Σ resid_i x_ij ∈ penalty_j ∂|γ_j|` for
    /// a residual vector given in canonical order.
    pub fn raw_gradient_gap(&self, resid: &[f64], gamma: &[f64], penalty: &[f64]) -> f64 {
        let nf = self.n as f64;
        let rbar: f64 = resid.iter().sum::<f64>() / nf;
        let sub = |g: f64, bj: f64, pen: f64| -> f64 {
            if pen == 0.0 {
                g.abs()
            } else if bj == 0.0 {
                (g.abs() - pen).max(0.0)
            } else {
                (g - bj.signum() * pen).abs()
            }
        };
        let mut gap = sub(rbar, gamma[self.intercept], penalty[self.intercept]);
        for j in 0..self.p {
            if j == self.intercept || self.dead[j] {
                continue;
            }
            let col = self.col(j);
            let g: f64 =
                col.iter().zip(resid).map(|(&xv, &ri)| xv * ri).sum::<f64>() / nf;
            let g_raw = self.sd[j] * g + self.mu[j] * rbar;
            gap = gap.max(sub(g_raw, gamma[j], penalty[j]));
        }
        gap
    }

    /// Raw-scale coefficients from internal ones.
    fn map_back(&self, b: &[f64], c: f64, implicit_intercept: bool, y_mean: f64) -> Vec<f64> {
        let mut beta = vec![0.0; self.p];
        for j in 0..self.p {
            if j != self.intercept {
                beta[j] = b[j] / self.sd[j];
            }
        }
        let shift: f64 = (0..self.p).map(|j| beta[j] * self.mu[j]).sum();
        beta[self.intercept] = if implicit_intercept { y_mean - shift } else { c - shift };
        beta
    }

    /// Solves at the given per-column penalties (raw scale) under the
    /// preparation weights. `y` is in the caller's row order; `warm` is a
    /// raw-scale coefficient start.
    pub fn solve(&self, y: &[f64], penalty: &[f64], warm: Option<&[f64]>) -> CdSolution {
        assert_eq!(y.len(), self.n);
        let yy: Vec<f64> = self.order.iter().map(|&i| y[i]).collect();
        self.solve_canonical(&yy, penalty, warm)
    }

    /// As [`solve`] with `y` already in canonical order.
    pub fn solve_canonical(&self, yy: &[f64], penalty: &[f64], warm: Option<&[f64]>) -> CdSolution {
        assert_eq!(penalty.len(), self.p);
        let standardized = self.opts.standardize;
        let y_mean = if standardized {
            yy.iter().zip(&self.w).map(|(&v, &wi)| wi * v).sum::<f64>() / self.sum_w
        } else {
            0.0
        };

        // Internal coefficients b_j = beta_j * sd_j with penalties
        // lam_j = penalty_j / sd_j: exactly the raw problem, reparametrized.
        let mut b = vec![0.0; self.p];
        if let Some(init) = warm {
            for j in 0..self.p {
                if self.dead[j] || (standardized && j == self.intercept) {
                    continue;
                }
                b[j] = init[j] * self.sd[j];
            }
            if !standardized {
                b[self.intercept] = init[self.intercept];
            }
        }
        let mut r: Vec<f64> = yy.iter().map(|&v| v - y_mean).collect();
        for j in 0..self.p {
            if b[j] != 0.0 {
                let bj = b[j];
                for (ri, &xv) in r.iter_mut().zip(self.col(j)) {
                    *ri -= bj * xv;
                }
            }
        }

        let iter_all: Vec<usize> = (0..self.p)
            .filter(|&j| !self.dead[j] && !(standardized && j == self.intercept))
            .collect();
        let lam: Vec<f64> = (0..self.p).map(|j| penalty[j] / self.sd[j]).collect();

        let (sol, b, c) = self.run(
            &self.w,
            &self.curvature,
            &iter_all,
            &lam,
            penalty,
            b,
            r,
            standardized,
        );
        let beta = self.map_back(&b, c, standardized, y_mean);
        CdSolution { beta, ..sol }
    }

    /// Solves under per-call weights on the prepared columns; the intercept
    /// is an explicit unpenalized coordinate. `w_caller` and `y` are in the
    /// caller's row order when `permuted = false`, canonical otherwise.
    pub fn solve_with_weights(
        &self,
        y_canonical: &[f64],
        w_canonical: &[f64],
        penalty: &[f64],
        warm: Option<&[f64]>,
    ) -> CdSolution {
        assert_eq!(penalty.len(), self.p);
        let nf = self.n as f64;
        let mut curvature = vec![0.0; self.p];
        for j in 0..self.p {
            if self.dead[j] {
                continue;
            }
            let col = self.col(j);
            curvature[j] =
                col.iter().zip(w_canonical).map(|(&v, &wi)| wi * v * v).sum::<f64>() / nf;
        }

        let mut b = vec![0.0; self.p];
        let mut c = 0.0;
        if let Some(init) = warm {
            for j in 0..self.p {
                if j == self.intercept || self.dead[j] {
                    continue;
                }
                b[j] = init[j] * self.sd[j];
            }
            let shift: f64 =
                (0..self.p).filter(|&j| j != self.intercept).map(|j| init[j] * self.mu[j]).sum();
            c = init[self.intercept] + shift;
        }
        b[self.intercept] = c;

        let mut r: Vec<f64> = y_canonical.to_vec();
        for j in 0..self.p {
            if b[j] != 0.0 {
                let bj = b[j];
                for (ri, &xv) in r.iter_mut().zip(self.col(j)) {
                    *ri -= bj * xv;
                }
            }
        }

        let iter_all: Vec<usize> = (0..self.p).filter(|&j| !self.dead[j]).collect();
        let lam: Vec<f64> = (0..self.p).map(|j| penalty[j] / self.sd[j]).collect();

        let (sol, b, c) =
            self.run(w_canonical, &curvature, &iter_all, &lam, penalty, b, r, false);
        let beta = self.map_back(&b, c, false, 0.0);
        CdSolution { beta, ..sol }
    }

    /// The shared sweep loop. Returns the solution shell plus the final
    /// internal coefficients and intercept coordinate.
    #[allow(clippy::too_many_arguments)]
    fn run(
        &self,
        w: &[f64],
        curvature: &[f64],
        iter_all: &[usize],
        lam: &[f64],
        penalty: &[f64],
        mut b: Vec<f64>,
        mut r: Vec<f64>,
        implicit_intercept: bool,
    ) -> (CdSolution, Vec<f64>, f64) {
        let n = self.n;
        let nf = n as f64;

        let mut trace = self.opts.record_objective.then(Vec::new);
        let record = |trace: &mut Option<Vec<f64>>, b: &[f64], r: &[f64]| {
            if let Some(t) = trace.as_mut() {
                let rss: f64 = r.iter().zip(w).map(|(&ri, &wi)| wi * ri * ri).sum();
                let pen: f64 = b.iter().zip(lam).map(|(&bj, &lj)| lj * bj.abs()).sum();
                t.push(rss / (2.0 * nf) + pen);
            }
        };
        record(&mut trace, &b, &r);

        let sweep = |set: &[usize], b: &mut [f64], r: &mut [f64]| -> f64 {
            let mut max_change = 0.0_f64;
            for &j in set {
                let s = curvature[j];
                if s <= 0.0 {
                    continue;
                }
                let col = self.col(j);
                let mut g = 0.0;
                for i in 0..n {
                    g += w[i] * r[i] * col[i];
                }
                g /= nf;
                let u = g + s * b[j];
                let lj = lam[j];
                let b_new = if lj > 0.0 { soft_threshold(u, lj) / s } else { u / s };
                if b_new != b[j] {
                    let delta = b_new - b[j];
                    for i in 0..n {
                        r[i] -= delta * col[i];
                    }
                    b[j] = b_new;
                    max_change = max_change.max(delta.abs() / self.sd[j]);
                }
            }
            max_change
        };

        let mut sweeps = 0usize;
        let mut converged = false;
        let mut kkt_gap = f64::INFINITY;
        while sweeps < self.opts.max_sweeps {
            let change = sweep(iter_all, &mut b, &mut r);
            sweeps += 1;
            record(&mut trace, &b, &r);
            if change < self.opts.tol_coef {
                // An infinite KKT tolerance (internal path fits) accepts on
                // coefficient stability alone, skipping the gap pass.
                if self.opts.tol_kkt.is_infinite() {
                    kkt_gap = 0.0;
                    converged = true;
                    break;
                }
                kkt_gap = self.kkt_gap(w, &b, &r, penalty);
                if kkt_gap <= self.opts.tol_kkt {
                    converged = true;
                    break;
                }
                continue;
            }
            // Unpenalized coordinates stay in the active set throughout.
            let active: Vec<usize> =
                iter_all.iter().copied().filter(|&j| b[j] != 0.0 || lam[j] == 0.0).collect();
            while sweeps < self.opts.max_sweeps {
                let c = sweep(&active, &mut b, &mut r);
                sweeps += 1;
                record(&mut trace, &b, &r);
                if c < self.opts.tol_coef {
                    break;
                }
            }
        }
        let _ = implicit_intercept;
        if !converged {
            if self.opts.tol_kkt.is_infinite() {
                kkt_gap = 0.0;
                converged = true;
            } else {
                kkt_gap = self.kkt_gap(w, &b, &r, penalty);
                converged = kkt_gap <= self.opts.tol_kkt;
            }
        }

        let c = b[self.intercept];
        (
            CdSolution {
                beta: Vec::new(),
                iterations: sweeps,
                converged,
                kkt_gap,
                objective_trace: trace,
            },
            b,
            c,
        )
    }

    /// Raw-scale sup-norm KKT violation at the current internal state.
    fn kkt_gap(&self, w: &[f64], b: &[f64], r: &[f64], penalty: &[f64]) -> f64 {
        let nf = self.n as f64;
        let wr_mean: f64 = r.iter().zip(w).map(|(&ri, &wi)| wi * ri).sum::<f64>() / nf;
        // Intercept gradient: near-zero by construction when profiled out,
        // the live unpenalized-coordinate gradient otherwise. A penalized
        // intercept (deviation toggle) runs through the raw path, where the
        // subgradient rule applies.
        let mut gap = if penalty[self.intercept] == 0.0 {
            wr_mean.abs()
        } else if b[self.intercept] == 0.0 {
            (wr_mean.abs() - penalty[self.intercept]).max(0.0)
        } else {
            (wr_mean - b[self.intercept].signum() * penalty[self.intercept]).abs()
        };
        for j in 0..self.p {
            if j == self.intercept || self.dead[j] {
                continue;
            }
            let col = self.col(j);
            let mut g = 0.0;
            for i in 0..self.n {
                g += w[i] * r[i] * col[i];
            }
            g /= nf;
            // Undo the standardization to express the gradient in raw terms.
            let g_raw = self.sd[j] * g + self.mu[j] * wr_mean;
            let viol = if penalty[j] == 0.0 {
                g_raw.abs()
            } else if b[j] == 0.0 {
                (g_raw.abs() - penalty[j]).max(0.0)
            } else {
                (g_raw - b[j].signum() * penalty[j]).abs()
            };
            gap = gap.max(viol);
        }
        gap
    }
}

pub(crate) fn soft_threshold(u: f64, lambda: f64) -> f64 {
    if u > lambda {
        u - lambda
    } else if u < -lambda {
        u + lambda
    } else {
        0.0
    }
}

/// Canonical row order keyed on a response and the row contents (unit
/// weights). Used by the logistic solver to canonicalize once at entry.
pub(crate) fn canonical_rows(x: &DesignMatrix, key: &[f64]) -> Vec<usize> {
    let ones = vec![1.0; x.n()];
    canonical_order(x, Some(key), &ones)
}

/// Total order on observations: by response (when keyed), then weight, then
/// the row contents. Full ties are exact duplicate observations, which are
/// interchangeable in every reduction.
fn canonical_order(x: &DesignMatrix, y: Option<&[f64]>, w: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.n()).collect();
    idx.sort_unstable_by(|&a, &b| {
        if let Some(y) = y {
            match y[a].total_cmp(&y[b]) {
                std::cmp::Ordering::Equal => {}
                o => return o,
            }
        }
        match w[a].total_cmp(&w[b]) {
            std::cmp::Ordering::Equal => {}
            o => return o,
        }
        for j in 0..x.p() {
            let col = x.column_slice(j);
            match col[a].total_cmp(&col[b]) {
                std::cmp::Ordering::Equal => {}
                o => return o,
            }
        }
        std::cmp::Ordering::Equal
    });
    idx
}
