//! Small dense linear algebra helpers: Cholesky factorization and solves,
//! a 1-norm reciprocal-condition estimate, and symmetric 2×2 eigenvalues.
//!
//! The restricted refits and the score-variance inversion only ever touch
//! matrices of modest size (support size × support size, or k ≤ 2), so plain
//! dense routines are enough.

use ndarray::{Array1, Array2};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
///
/// Fails when a pivot drops below `rel_tol` times the largest diagonal entry,
/// which is how callers detect singular restricted designs.
pub fn cholesky(a: &Array2<f64>, rel_tol: f64) -> Option<Array2<f64>> {
    let k = a.nrows();
    debug_assert_eq!(k, a.ncols());
    let max_diag = (0..k).map(|i| a[[i, i]].abs()).fold(0.0, f64::max);
    let floor = rel_tol * max_diag.max(f64::MIN_POSITIVE);
    let mut l = Array2::<f64>::zeros((k, k));
    for j in 0..k {
        let mut d = a[[j, j]];
        for t in 0..j {
            d -= l[[j, t]] * l[[j, t]];
        }
        if !(d > floor) {
            return None;
        }
        let dj = d.sqrt();
        l[[j, j]] = dj;
        for i in (j + 1)..k {
            let mut s = a[[i, j]];
            for t in 0..j {
                s -= l[[i, t]] * l[[j, t]];
            }
            l[[i, j]] = s / dj;
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` given the Cholesky factor `L`.
pub fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let k = l.nrows();
    let mut x = b.clone();
    for i in 0..k {
        for t in 0..i {
            let v = x[t];
            x[i] -= l[[i, t]] * v;
        }
        x[i] /= l[[i, i]];
    }
    for i in (0..k).rev() {
        for t in (i + 1)..k {
            let v = x[t];
            x[i] -= l[[t, i]] * v;
        }
        x[i] /= l[[i, i]];
    }
    x
}

/// 1-norm reciprocal condition estimate for an SPD matrix with a known
/// Cholesky factor (Hager-style power iteration on the inverse).
pub fn rcond_spd(a: &Array2<f64>, l: &Array2<f64>) -> f64 {
    let k = a.nrows();
    if k == 0 {
        return 1.0;
    }
    let norm_a = (0..k)
        .map(|j| (0..k).map(|i| a[[i, j]].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if norm_a == 0.0 {
        return 0.0;
    }
    // Estimate ||A^{-1}||_1 from a few solves.
    let mut x = Array1::from_elem(k, 1.0 / k as f64);
    let mut est = 0.0_f64;
    for _ in 0..4 {
        let y = cholesky_solve(l, &x);
        let norm_y: f64 = y.iter().map(|v| v.abs()).sum();
        if norm_y <= est {
            break;
        }
        est = norm_y;
        let sign = y.mapv(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let z = cholesky_solve(l, &sign);
        let (mut best, mut arg) = (0.0_f64, 0usize);
        for (i, v) in z.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                arg = i;
            }
        }
        x.fill(0.0);
        x[arg] = 1.0;
    }
    // Also fold in unit-vector columns for a sturdier lower bound.
    for j in 0..k.min(8) {
        let mut e = Array1::zeros(k);
        e[j] = 1.0;
        let y = cholesky_solve(l, &e);
        est = est.max(y.iter().map(|v| v.abs()).sum());
    }
    1.0 / (norm_a * est)
}

/// Eigenvalues of a symmetric 2×2 matrix, ascending.
pub fn eigvals_sym2(a: &Array2<f64>) -> (f64, f64) {
    let (p, q, r) = (a[[0, 0]], a[[0, 1]], a[[1, 1]]);
    let tr = p + r;
    let disc = ((p - r) * (p - r) + 4.0 * q * q).max(0.0).sqrt();
    ((tr - disc) / 2.0, (tr + disc) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let b = array![1.0, -2.0, 0.5];
        let l = cholesky(&a, 1e-12).unwrap();
        let x = cholesky_solve(&l, &b);
        let r = a.dot(&x) - &b;
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn cholesky_rejects_singular() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        assert!(cholesky(&a, 1e-10).is_none());
    }

    #[test]
    fn rcond_tracks_conditioning() {
        let a = array![[1.0, 0.0], [0.0, 1e-6]];
        let l = cholesky(&a, 1e-16).unwrap();
        let r = rcond_spd(&a, &l);
        assert!(r < 1e-5 && r > 1e-8, "rcond {r}");
        let id = array![[1.0, 0.0], [0.0, 1.0]];
        let lid = cholesky(&id, 1e-16).unwrap();
        assert!(rcond_spd(&id, &lid) > 0.4);
    }

    #[test]
    fn sym2_eigenvalues() {
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let (lo, hi) = eigvals_sym2(&a);
        assert!((lo - 1.0).abs() < 1e-14 && (hi - 3.0).abs() < 1e-14);
    }
}
