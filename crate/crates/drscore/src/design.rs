//! Core data containers: design matrices with a flagged intercept column,
//! observation weights, and the (outcome, exposure, covariates) dataset.

use ndarray::{Array1, Array2, ArrayView1, ShapeBuilder};

#[derive(Debug, thiserror::Error)]
pub enum DesignError {
    #[error("design matrix must have n >= 2 and p >= 1, got n={n}, p={p}")]
    TooSmall { n: usize, p: usize },
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("intercept column {column} is not constant one")]
    BadIntercept { column: usize },
    #[error("intercept column index {column} out of range for p={p}")]
    InterceptOutOfRange { column: usize, p: usize },
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    LengthMismatch { what: &'static str, got: usize, expected: usize },
    #[error("observation weights must be nonnegative and not all zero")]
    BadWeights,
}

/// An n×p design matrix stored column-major with one column flagged as the
/// (unpenalized) intercept.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    values: Array2<f64>,
    intercept: usize,
}

impl DesignMatrix {
    /// Validates and wraps a matrix whose `intercept` column is constant 1.
    pub fn new(values: Array2<f64>, intercept: usize) -> Result<Self, DesignError> {
        let (n, p) = (values.nrows(), values.ncols());
        if n < 2 || p < 1 {
            return Err(DesignError::TooSmall { n, p });
        }
        if intercept >= p {
            return Err(DesignError::InterceptOutOfRange { column: intercept, p });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DesignError::NonFinite { what: "design matrix" });
        }
        if values.column(intercept).iter().any(|&v| v != 1.0) {
            return Err(DesignError::BadIntercept { column: intercept });
        }
        // Column-major storage keeps the per-column solver loops contiguous.
        let mut colmajor = Array2::zeros(values.raw_dim().f());
        colmajor.assign(&values);
        Ok(Self { values: colmajor, intercept })
    }

    /// Builds `[1 | covariates]` with the intercept in column 0.
    pub fn with_intercept(covariates: &Array2<f64>) -> Result<Self, DesignError> {
        let (n, k) = (covariates.nrows(), covariates.ncols());
        let mut values = Array2::zeros((n, k + 1).f());
        values.column_mut(0).fill(1.0);
        for j in 0..k {
            values.column_mut(j + 1).assign(&covariates.column(j));
        }
        Self::new(values, 0)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn intercept_column(&self) -> usize {
        self.intercept
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.column(j)
    }

    /// Contiguous slice view of column `j` (guaranteed by construction).
    pub fn column_slice(&self, j: usize) -> &[f64] {
        self.values
            .column(j)
            .to_slice()
            .expect("columns of a column-major design are contiguous")
    }

    /// Linear predictor `X beta`.
    pub fn linear_predictor(&self, beta: &[f64]) -> Array1<f64> {
        assert_eq!(beta.len(), self.p());
        let mut eta = Array1::zeros(self.n());
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                let col = self.column_slice(j);
                for (e, &x) in eta.iter_mut().zip(col) {
                    *e += b * x;
                }
            }
        }
        eta
    }

    /// A new design keeping the given rows (in the order provided).
    pub fn subset_rows(&self, rows: &[usize]) -> Self {
        let mut values = Array2::zeros((rows.len(), self.p()).f());
        for j in 0..self.p() {
            let src = self.column_slice(j);
            let mut dst = values.column_mut(j);
            for (t, &i) in rows.iter().enumerate() {
                dst[t] = src[i];
            }
        }
        Self { values, intercept: self.intercept }
    }
}

/// Nonnegative per-observation weights, finite and not all zero.
#[derive(Debug, Clone)]
pub struct ObservationWeights {
    w: Array1<f64>,
}

impl ObservationWeights {
    pub fn new(w: Array1<f64>) -> Result<Self, DesignError> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(DesignError::NonFinite { what: "weights" });
        }
        if w.iter().any(|&v| v < 0.0) || w.iter().all(|&v| v == 0.0) {
            return Err(DesignError::BadWeights);
        }
        Ok(Self { w })
    }

    pub fn unit(n: usize) -> Self {
        Self { w: Array1::ones(n) }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.w.as_slice().expect("weights are contiguous")
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.w
    }
}

/// One analysis dataset: outcome, exposure and covariate design (with
/// intercept). The exposure is binary {0,1} for the univariate pipeline and
/// {0,1,2} for categorical systems.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: Array1<f64>,
    pub a: Array1<f64>,
    pub design: DesignMatrix,
}

impl Dataset {
    pub fn new(y: Array1<f64>, a: Array1<f64>, design: DesignMatrix) -> Result<Self, DesignError> {
        let n = design.n();
        if y.len() != n {
            return Err(DesignError::LengthMismatch { what: "outcome", got: y.len(), expected: n });
        }
        if a.len() != n {
            return Err(DesignError::LengthMismatch { what: "exposure", got: a.len(), expected: n });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DesignError::NonFinite { what: "outcome" });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(DesignError::NonFinite { what: "exposure" });
        }
        Ok(Self { y, a, design })
    }

    pub fn n(&self) -> usize {
        self.design.n()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_bad_intercept() {
        let m = array![[1.0, 2.0], [0.5, 3.0]];
        assert!(matches!(DesignMatrix::new(m, 0), Err(DesignError::BadIntercept { .. })));
    }

    #[test]
    fn with_intercept_prepends_ones() {
        let cov = array![[2.0, -1.0], [0.0, 4.0], [1.0, 1.0]];
        let d = DesignMatrix::with_intercept(&cov).unwrap();
        assert_eq!(d.p(), 3);
        assert_eq!(d.intercept_column(), 0);
        assert!(d.column(0).iter().all(|&v| v == 1.0));
        assert_eq!(d.column(1)[0], 2.0);
    }

    #[test]
    fn weights_must_be_valid() {
        assert!(ObservationWeights::new(array![0.0, 0.0]).is_err());
        assert!(ObservationWeights::new(array![1.0, -0.1]).is_err());
        assert!(ObservationWeights::new(array![0.0, 2.0]).is_ok());
    }

    #[test]
    fn linear_predictor_matches_manual() {
        let cov = array![[2.0], [0.0], [-1.0]];
        let d = DesignMatrix::with_intercept(&cov).unwrap();
        let eta = d.linear_predictor(&[0.5, 2.0]);
        assert_eq!(eta.to_vec(), vec![4.5, 0.5, -1.5]);
    }
}
