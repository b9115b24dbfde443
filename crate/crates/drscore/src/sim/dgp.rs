//! Data-generating processes for the three simulation experiments.
//!
//! Covariates are multivariate normal with Toeplitz covariance
//! `Sigma[j,k] = 2^{-|j-k|}`; the exposure is Bernoulli with a logistic
//! model in L = [1 | L*]; the outcome is normal with mean `psi A + beta' L`.
//! Experiment 2 generates the outcome from nonlinearly transformed
//! covariates (the analyst still adjusts for L, so only the exposure model
//! is correct); Experiment 3 makes the noise scale depend on (A, L).

use super::SimError;
use crate::design::{Dataset, DesignMatrix};
use crate::linalg;
use crate::seeding;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

/// Which experiment's outcome mechanism to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    One,
    Two,
    Three,
}

impl Experiment {
    pub fn from_index(i: u32) -> Option<Self> {
        match i {
            1 => Some(Self::One),
            2 => Some(Self::Two),
            3 => Some(Self::Three),
            _ => None,
        }
    }

    pub fn index(self) -> u32 {
        match self {
            Self::One => 1,
            Self::Two => 2,
            Self::Three => 3,
        }
    }
}

/// Reading of the outcome-coefficient tail `2^rho, ..., (p-2)^rho`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BetaTail {
    /// Decaying powers j^(-rho): the approximate-sparsity reading where
    /// rho = 2 is the sparser setting.
    #[default]
    InverseDecay,
    /// The literal growing powers j^rho.
    LiteralPowers,
}

/// Sign convention for the exposure-coefficient tail `-2^-2, ..., (p-2)^-2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GammaTail {
    /// Carry the displayed anchor's minus sign through the tail: -j^-2.
    #[default]
    AnchorNegative,
    /// All-positive decay +j^-2.
    AllPositive,
}

/// One simulation cell.
#[derive(Debug, Clone)]
pub struct DgpConfig {
    pub experiment: Experiment,
    pub n: usize,
    /// Number of columns of L including the intercept.
    pub p: usize,
    /// Signal strength multiplier on the outcome coefficients.
    pub tau: f64,
    /// Sparsity exponent of the coefficient tail.
    pub rho: f64,
    pub psi_true: f64,
    pub seed: u64,
    /// Multiplier on the outcome noise standard deviation (1 reproduces the
    /// experiments; 0 gives noiseless data for consistency checks).
    pub noise_scale: f64,
    pub beta_tail: BetaTail,
    pub gamma_tail: GammaTail,
}

impl DgpConfig {
    pub fn new(experiment: Experiment, n: usize, p: usize, tau: f64, rho: f64, seed: u64) -> Self {
        Self {
            experiment,
            n,
            p,
            tau,
            rho,
            psi_true: 0.3,
            seed,
            noise_scale: 1.0,
            beta_tail: BetaTail::default(),
            gamma_tail: GammaTail::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.p < 4 {
            return Err(SimError::BadConfig {
                what: "p must be >= 4 (three leading entries plus one power term)".into(),
            });
        }
        if self.n < 2 {
            return Err(SimError::BadConfig { what: "n must be >= 2".into() });
        }
        if !(self.tau.is_finite() && self.rho.is_finite() && self.psi_true.is_finite()) {
            return Err(SimError::BadConfig { what: "non-finite parameter".into() });
        }
        if !(self.noise_scale >= 0.0) {
            return Err(SimError::BadConfig { what: "noise_scale must be >= 0".into() });
        }
        Ok(())
    }
}

/// Toeplitz covariance `Sigma[j,k] = 2^{-|j-k|}`.
pub fn toeplitz_covariance(d: usize) -> Array2<f64> {
    Array2::from_shape_fn((d, d), |(j, k)| {
        2f64.powi(-((j as i32 - k as i32).abs()))
    })
}

/// Outcome coefficients `tau * (-1, 1, -1, t_2, ..., t_{p-2})`.
pub fn beta_coefficients(p: usize, tau: f64, rho: f64, tail: BetaTail) -> Array1<f64> {
    assert!(p >= 4);
    let mut b = Array1::zeros(p);
    b[0] = -tau;
    b[1] = tau;
    b[2] = -tau;
    for j in 2..=(p - 2) {
        let t = match tail {
            BetaTail::InverseDecay => (j as f64).powf(-rho),
            BetaTail::LiteralPowers => (j as f64).powf(rho),
        };
        b[j + 1] = tau * t;
    }
    b
}

/// Exposure coefficients `(1, -1, 1, s_2 2^-2, ..., s_{p-2} (p-2)^-2)`.
pub fn gamma_coefficients(p: usize, tail: GammaTail) -> Array1<f64> {
    assert!(p >= 4);
    let mut g = Array1::zeros(p);
    g[0] = 1.0;
    g[1] = -1.0;
    g[2] = 1.0;
    for j in 2..=(p - 2) {
        let mag = (j as f64).powi(-2);
        g[j + 1] = match tail {
            GammaTail::AnchorNegative => -mag,
            GammaTail::AllPositive => mag,
        };
    }
    g
}

/// A sampler with the Cholesky factor precomputed, so replications share
/// the O(p^3) setup.
pub struct DgpSampler {
    cfg: DgpConfig,
    chol: Array2<f64>,
    beta: Array1<f64>,
    gamma: Array1<f64>,
}

impl DgpSampler {
    pub fn new(cfg: DgpConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let d = cfg.p - 1;
        let sigma = toeplitz_covariance(d);
        let chol = linalg::cholesky(&sigma, 1e-14)
            .ok_or(SimError::BadConfig { what: "Toeplitz covariance not PD".into() })?;
        let beta = beta_coefficients(cfg.p, cfg.tau, cfg.rho, cfg.beta_tail);
        let gamma = gamma_coefficients(cfg.p, cfg.gamma_tail);
        Ok(Self { cfg, chol, beta, gamma })
    }

    pub fn config(&self) -> &DgpConfig {
        &self.cfg
    }

    pub fn beta(&self) -> &Array1<f64> {
        &self.beta
    }

    pub fn gamma(&self) -> &Array1<f64> {
        &self.gamma
    }

    /// True outcome mean given (A, L) as the analyst's models see it. Only
    /// meaningful for Experiments 1 and 3 (where the linear model is
    /// correct).
    pub fn linear_mean(&self, a: f64, l_row: &[f64]) -> f64 {
        self.cfg.psi_true * a
            + self.beta.iter().zip(l_row).map(|(&b, &x)| b * x).sum::<f64>()
    }

    /// Draws one dataset. Sampling order is fixed (covariate normals, then
    /// exposure uniforms, then outcome normals), so the draw is a pure
    /// function of the seed.
    pub fn generate(&self, seed: u64) -> Dataset {
        let (n, p) = (self.cfg.n, self.cfg.p);
        let d = p - 1;
        let mut rng = seeding::stream(seed, seeding::salt::DGP, 0);

        let mut z = vec![0.0_f64; d];
        let mut lstar = Array2::<f64>::zeros((n, d));
        for i in 0..n {
            for zk in z.iter_mut() {
                *zk = rng.sample(StandardNormal);
            }
            for j in 0..d {
                // Row of the lower-triangular factor times z.
                let mut acc = 0.0;
                for k in 0..=j {
                    acc += self.chol[[j, k]] * z[k];
                }
                lstar[[i, j]] = acc;
            }
        }
        let design = DesignMatrix::with_intercept(&lstar).expect("valid simulated design");

        let gamma = self.gamma.as_slice().expect("contiguous");
        let eta_a = design.linear_predictor(gamma);
        let mut a = Array1::<f64>::zeros(n);
        for i in 0..n {
            let pi = 1.0 / (1.0 + (-eta_a[i]).exp());
            let u: f64 = rng.gen();
            a[i] = if u < pi { 1.0 } else { 0.0 };
        }

        let beta = self.beta.as_slice().expect("contiguous");
        let mut y = Array1::<f64>::zeros(n);
        match self.cfg.experiment {
            Experiment::One => {
                let eta_y = design.linear_predictor(beta);
                for i in 0..n {
                    let eps: f64 = rng.sample(StandardNormal);
                    y[i] = self.cfg.psi_true * a[i] + eta_y[i] + self.cfg.noise_scale * eps;
                }
            }
            Experiment::Two => {
                // Transformed design for the outcome only; the analyst
                // adjusts for L.
                let mut xrow = vec![0.0_f64; p];
                for i in 0..n {
                    xrow[0] = 1.0;
                    xrow[1] = (5.0 + lstar[[i, 0]]).ln().abs();
                    xrow[2] = lstar[[i, 1]] * lstar[[i, 0]].exp();
                    let s = lstar[[i, 1]] + lstar[[i, 2]];
                    xrow[3] = -(s * s);
                    for j in 3..d {
                        xrow[j + 1] = lstar[[i, j]];
                    }
                    let mut mean = self.cfg.psi_true * a[i];
                    for (j, &xv) in xrow.iter().enumerate() {
                        let coef = if j < 3 { 1.0 } else { beta[j] };
                        mean += coef * xv;
                    }
                    let eps: f64 = rng.sample(StandardNormal);
                    y[i] = mean + self.cfg.noise_scale * eps;
                }
            }
            Experiment::Three => {
                let eta_y = design.linear_predictor(beta);
                let mu: Vec<f64> =
                    (0..n).map(|i| self.cfg.psi_true * a[i] + eta_y[i]).collect();
                let rms = (mu.iter().map(|&m| m * m).sum::<f64>() / n as f64).sqrt();
                for i in 0..n {
                    // The paper's sigma(A,L) formula can be negative; its
                    // absolute value serves as the standard deviation.
                    let sd = (mu[i] / rms).abs();
                    let eps: f64 = rng.sample(StandardNormal);
                    y[i] = mu[i] + self.cfg.noise_scale * sd * eps;
                }
            }
        }

        Dataset::new(y, a, design).expect("simulated data is finite")
    }
}

/// Convenience wrapper: build the sampler and draw at the config's seed.
pub fn generate_dataset(cfg: &DgpConfig) -> Result<Dataset, SimError> {
    let sampler = DgpSampler::new(cfg.clone())?;
    Ok(sampler.generate(cfg.seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toeplitz_entries() {
        let s = toeplitz_covariance(5);
        assert_eq!(s[[0, 0]], 1.0);
        assert_eq!(s[[0, 1]], 0.5);
        assert_eq!(s[[0, 2]], 0.25);
        assert_eq!(s[[3, 1]], 0.25);
    }

    #[test]
    fn beta_pattern_literal_and_decay() {
        let lit = beta_coefficients(6, 1.0, 2.0, BetaTail::LiteralPowers);
        assert_eq!(lit.to_vec(), vec![-1.0, 1.0, -1.0, 4.0, 9.0, 16.0]);
        let dec = beta_coefficients(6, 1.0, 2.0, BetaTail::InverseDecay);
        assert_eq!(dec.to_vec(), vec![-1.0, 1.0, -1.0, 0.25, 1.0 / 9.0, 0.0625]);
        let scaled = beta_coefficients(6, 0.4, 2.0, BetaTail::InverseDecay);
        assert!((scaled[3] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn gamma_pattern_signs() {
        let g = gamma_coefficients(7, GammaTail::AnchorNegative);
        assert_eq!(g[0], 1.0);
        assert_eq!(g[1], -1.0);
        assert_eq!(g[2], 1.0);
        assert!((g[3] - (-0.25)).abs() < 1e-15);
        assert!((g[4] - (-1.0 / 9.0)).abs() < 1e-15);
        assert!((g[5] - (-1.0 / 16.0)).abs() < 1e-15);
        let gp = gamma_coefficients(7, GammaTail::AllPositive);
        assert!((gp[3] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = DgpConfig::new(Experiment::One, 40, 10, 1.0, 2.0, 99);
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a.y.to_vec(), b.y.to_vec());
        assert_eq!(a.a.to_vec(), b.a.to_vec());
    }

    #[test]
    fn experiment_two_changes_outcome_not_exposure() {
        let mut cfg = DgpConfig::new(Experiment::One, 50, 8, 1.0, 2.0, 7);
        let d1 = generate_dataset(&cfg).unwrap();
        cfg.experiment = Experiment::Two;
        let d2 = generate_dataset(&cfg).unwrap();
        assert_eq!(d1.a.to_vec(), d2.a.to_vec());
        assert_ne!(d1.y.to_vec(), d2.y.to_vec());
        assert_eq!(d1.design.values(), d2.design.values());
    }
}
