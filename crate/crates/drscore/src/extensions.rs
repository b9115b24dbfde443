//! Two-component score systems: effect heterogeneity with a scalar
//! modifier, three-level categorical exposures, and two-period controlled
//! direct effects. Each system fixes its exposure model(s) once and refits
//! the per-component outcome nuisances at every ψ.

use crate::design::{Dataset, DesignMatrix, ObservationWeights};
use crate::inversion::region::ScoreSystem;
use crate::inversion::{CiConfig, InversionError};
use crate::nuisance::{
    estimate_propensity, select_lambda_beta, OutcomeNuisanceFit, PreparedOutcomeSolver,
    PropensityFit,
};
use crate::score::{
    score_vector, test_statistic_with, transform_outcome, EffectParameter, LinkFunction,
    LogLinkForm, ScoreEvaluation, VarianceOptions,
};
use crate::seeding;
use crate::solvers::{default_lambda_grid, lambda_max_gaussian, lambda_max_logistic, CvSpec};
use ndarray::{Array1, Array2};

#[derive(Debug, thiserror::Error)]
pub enum ExtensionError {
    #[error("modifier index {index} is invalid (p = {p}, intercept = {intercept})")]
    BadModifier { index: usize, p: usize, intercept: usize },
    #[error("categorical exposure must take values in {{0,1,2}}, found {value}")]
    BadLevel { value: f64 },
    #[error("exposure level {level} is missing")]
    MissingLevel { level: u8 },
    #[error("two-period data: {what}")]
    BadTwoPeriod { what: &'static str },
}

/// Effect-heterogeneity specification: which column of L acts as the
/// modifier Z.
#[derive(Debug, Clone, Copy)]
pub struct InteractionSpec {
    pub modifier_index: usize,
    pub link: LinkFunction,
    pub log_form: LogLinkForm,
}

/// Assembled per-ψ score inputs of a two-component system.
#[derive(Debug, Clone)]
pub struct ScoreInputs {
    pub h: Array1<f64>,
    pub a_terms: Array2<f64>,
    pub pi_hat: Array2<f64>,
    pub m_hat: Array2<f64>,
    pub modifiers: Option<Array2<f64>>,
    pub nuisances: Vec<OutcomeNuisanceFit>,
}

impl ScoreInputs {
    pub fn scores(&self) -> Result<Array2<f64>, InversionError> {
        Ok(score_vector(&self.h, &self.a_terms, &self.pi_hat, &self.m_hat, self.modifiers.as_ref())?)
    }
}

fn propensity_pipeline(
    l: &DesignMatrix,
    a: &[f64],
    cfg: &CiConfig,
    salt_index: u64,
) -> Result<(PropensityFit, ObservationWeights), InversionError> {
    let lmax = lambda_max_logistic(l, a).max(1e-10);
    let cv = CvSpec::new(
        cfg.cv_folds,
        default_lambda_grid(lmax, cfg.n_lambda, cfg.lambda_min_ratio),
        seeding::derive(cfg.seed, seeding::salt::CV_FOLDS, 10 + salt_index),
    );
    let fit = estimate_propensity(l, a, &cv, &cfg.propensity)?;
    let w = fit.weights();
    Ok((fit, w))
}

fn select_null_lambda(
    l: &DesignMatrix,
    y: &[f64],
    weights: &ObservationWeights,
    modifier: Option<&[f64]>,
    cfg: &CiConfig,
    salt_index: u64,
) -> Result<f64, InversionError> {
    let effective = crate::nuisance::effective_weights(weights, modifier)?;
    if effective.iter().all(|&v| v == 0.0) {
        // Degenerate modifier: the fit is pinned at zero anyway.
        return Ok(1.0);
    }
    let eff = ObservationWeights::new(Array1::from_vec(effective)).expect("validated");
    let lmax = lambda_max_gaussian(l, y, &eff).max(1e-10);
    let cv = CvSpec::new(
        cfg.cv_folds,
        default_lambda_grid(lmax, cfg.n_lambda, cfg.lambda_min_ratio),
        seeding::derive(cfg.seed, seeding::salt::CV_FOLDS, 20 + salt_index),
    );
    Ok(select_lambda_beta(l, y, &eff, &cv)?)
}

/// Effect-heterogeneity system: scores
/// `U1 = (A − π̂)(H − m̂1)` and `U2 = Z (A − π̂)(H − m̂2)`, one shared
/// exposure model, per-component outcome nuisances (the second fitted with
/// the working regressor multiplied by Z).
pub struct InteractionSystem<'a> {
    data: &'a Dataset,
    spec: InteractionSpec,
    z: Vec<f64>,
    pub propensity: PropensityFit,
    pub lambda_beta: [f64; 2],
    solver1: PreparedOutcomeSolver,
    solver2: PreparedOutcomeSolver,
    a_terms: Array2<f64>,
    pi_hat: Array2<f64>,
    modifiers: Array2<f64>,
    variance: VarianceOptions,
    warm: [Option<Vec<f64>>; 2],
}

impl<'a> InteractionSystem<'a> {
    pub fn assemble(
        data: &'a Dataset,
        spec: InteractionSpec,
        cfg: &CiConfig,
    ) -> Result<Self, InversionError> {
        let l = &data.design;
        if spec.modifier_index >= l.p() || spec.modifier_index == l.intercept_column() {
            return Err(ExtensionError::BadModifier {
                index: spec.modifier_index,
                p: l.p(),
                intercept: l.intercept_column(),
            }
            .into());
        }
        let z: Vec<f64> = l.column_slice(spec.modifier_index).to_vec();
        let a = data.a.as_slice().expect("contiguous");
        let (propensity, weights) = propensity_pipeline(l, a, cfg, 0)?;

        let y = data.y.as_slice().expect("contiguous");
        let lambda1 = select_null_lambda(l, y, &weights, None, cfg, 0)?;
        let lambda2 = select_null_lambda(l, y, &weights, Some(&z), cfg, 1)?;
        let solver1 = PreparedOutcomeSolver::new(l, &weights, None, lambda1)?;
        let solver2 = PreparedOutcomeSolver::new(l, &weights, Some(&z), lambda2)?;

        let n = data.n();
        let a_terms = Array2::from_shape_fn((n, 2), |(i, j)| {
            if j == 0 {
                data.a[i]
            } else {
                data.a[i] * z[i]
            }
        });
        let pi_hat = Array2::from_shape_fn((n, 2), |(i, _)| propensity.pi_hat[i]);
        let modifiers = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { 1.0 } else { z[i] });

        Ok(Self {
            data,
            spec,
            z,
            propensity,
            lambda_beta: [lambda1, lambda2],
            solver1,
            solver2,
            a_terms,
            pi_hat,
            modifiers,
            variance: VarianceOptions { centered: cfg.centered_variance },
            warm: [None, None],
        })
    }

    /// Builds the per-ψ score inputs: H(ψ) and both outcome nuisance fits.
    pub fn assemble_inputs(&mut self, psi: [f64; 2]) -> Result<ScoreInputs, InversionError> {
        let l = &self.data.design;
        let y = self.data.y.as_slice().expect("contiguous");
        let param = EffectParameter::new(psi.to_vec());
        let h = transform_outcome(y, &self.a_terms, &param, self.spec.link, self.spec.log_form)?;
        let hs = h.as_slice().expect("contiguous");

        let fit1 = self.solver1.solve(l, hs, param.clone(), self.warm[0].as_deref())?;
        let fit2 = self.solver2.solve(l, hs, param, self.warm[1].as_deref())?;
        self.warm[0] = Some(fit1.beta_hat.to_vec());
        self.warm[1] = Some(fit2.beta_hat.to_vec());

        let n = self.data.n();
        let m_hat =
            Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { fit1.m_hat[i] } else { fit2.m_hat[i] });
        // The exposure terms for the score residual are (A, A) with the
        // second component's Z carried by the modifier matrix; the A·Z
        // column in `a_terms` is only used by the H transform.
        let a_resid = Array2::from_shape_fn((n, 2), |(i, _)| self.data.a[i]);
        Ok(ScoreInputs {
            h,
            a_terms: a_resid,
            pi_hat: self.pi_hat.clone(),
            m_hat,
            modifiers: Some(self.modifiers.clone()),
            nuisances: vec![fit1, fit2],
        })
    }

    pub fn modifier(&self) -> &[f64] {
        &self.z
    }

    pub fn evaluate_at(&mut self, psi: [f64; 2]) -> Result<ScoreEvaluation, InversionError> {
        let inputs = self.assemble_inputs(psi)?;
        let scores = inputs.scores()?;
        Ok(test_statistic_with(&scores, self.variance)?)
    }
}

impl ScoreSystem for InteractionSystem<'_> {
    fn evaluate(&mut self, psi: [f64; 2]) -> Result<ScoreEvaluation, InversionError> {
        self.evaluate_at(psi)
    }
}

/// Three-level exposure specification (levels 0, 1, 2; level 0 is the
/// reference).
#[derive(Debug, Clone, Copy)]
pub struct CategoricalSpec {
    pub link: LinkFunction,
    pub log_form: LogLinkForm,
}

/// Categorical system: indicators A1 = 1{A=1}, A2 = 1{A=2}, separate
/// one-vs-rest exposure models, and per-component outcome nuisances whose
/// weights come from their own exposure model only.
pub struct CategoricalSystem<'a> {
    data: &'a Dataset,
    spec: CategoricalSpec,
    pub propensity: [PropensityFit; 2],
    pub lambda_beta: [f64; 2],
    solvers: [PreparedOutcomeSolver; 2],
    a_terms: Array2<f64>,
    pi_hat: Array2<f64>,
    variance: VarianceOptions,
    warm: [Option<Vec<f64>>; 2],
}

impl<'a> CategoricalSystem<'a> {
    pub fn assemble(
        data: &'a Dataset,
        spec: CategoricalSpec,
        cfg: &CiConfig,
    ) -> Result<Self, InversionError> {
        let l = &data.design;
        let mut seen = [false; 3];
        for &v in data.a.iter() {
            if v == 0.0 || v == 1.0 || v == 2.0 {
                seen[v as usize] = true;
            } else {
                return Err(ExtensionError::BadLevel { value: v }.into());
            }
        }
        for (level, &s) in seen.iter().enumerate() {
            if !s {
                return Err(ExtensionError::MissingLevel { level: level as u8 }.into());
            }
        }
        let a1: Vec<f64> = data.a.iter().map(|&v| (v == 1.0) as u8 as f64).collect();
        let a2: Vec<f64> = data.a.iter().map(|&v| (v == 2.0) as u8 as f64).collect();

        let (prop1, w1) = propensity_pipeline(l, &a1, cfg, 1)?;
        let (prop2, w2) = propensity_pipeline(l, &a2, cfg, 2)?;

        let y = data.y.as_slice().expect("contiguous");
        let lambda1 = select_null_lambda(l, y, &w1, None, cfg, 2)?;
        let lambda2 = select_null_lambda(l, y, &w2, None, cfg, 3)?;
        let solver1 = PreparedOutcomeSolver::new(l, &w1, None, lambda1)?;
        let solver2 = PreparedOutcomeSolver::new(l, &w2, None, lambda2)?;

        let n = data.n();
        let a_terms =
            Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { a1[i] } else { a2[i] });
        let pi_hat = Array2::from_shape_fn((n, 2), |(i, j)| {
            if j == 0 {
                prop1.pi_hat[i]
            } else {
                prop2.pi_hat[i]
            }
        });

        Ok(Self {
            data,
            spec,
            propensity: [prop1, prop2],
            lambda_beta: [lambda1, lambda2],
            solvers: [solver1, solver2],
            a_terms,
            pi_hat,
            variance: VarianceOptions { centered: cfg.centered_variance },
            warm: [None, None],
        })
    }

    pub fn assemble_inputs(&mut self, psi: [f64; 2]) -> Result<ScoreInputs, InversionError> {
        let l = &self.data.design;
        let y = self.data.y.as_slice().expect("contiguous");
        let param = EffectParameter::new(psi.to_vec());
        let h = transform_outcome(y, &self.a_terms, &param, self.spec.link, self.spec.log_form)?;
        let hs = h.as_slice().expect("contiguous");

        let fit1 = self.solvers[0].solve(l, hs, param.clone(), self.warm[0].as_deref())?;
        let fit2 = self.solvers[1].solve(l, hs, param, self.warm[1].as_deref())?;
        self.warm[0] = Some(fit1.beta_hat.to_vec());
        self.warm[1] = Some(fit2.beta_hat.to_vec());

        let n = self.data.n();
        let m_hat =
            Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { fit1.m_hat[i] } else { fit2.m_hat[i] });
        Ok(ScoreInputs {
            h,
            a_terms: self.a_terms.clone(),
            pi_hat: self.pi_hat.clone(),
            m_hat,
            modifiers: None,
            nuisances: vec![fit1, fit2],
        })
    }

    pub fn evaluate_at(&mut self, psi: [f64; 2]) -> Result<ScoreEvaluation, InversionError> {
        let inputs = self.assemble_inputs(psi)?;
        let scores = inputs.scores()?;
        Ok(test_statistic_with(&scores, self.variance)?)
    }
}

impl ScoreSystem for CategoricalSystem<'_> {
    fn evaluate(&mut self, psi: [f64; 2]) -> Result<ScoreEvaluation, InversionError> {
        self.evaluate_at(psi)
    }
}

/// Two-period study data for controlled direct effects: baseline exposure
/// A1 with covariates L1, follow-up exposure A2 with covariates L2 (both
/// covariate blocks without intercepts), outcome Y.
#[derive(Debug, Clone)]
pub struct TwoPeriodSpec {
    pub y: Array1<f64>,
    pub a1: Array1<f64>,
    pub a2: Array1<f64>,
    pub l1: Array2<f64>,
    pub l2: Array2<f64>,
    pub link: LinkFunction,
    pub log_form: LogLinkForm,
}

/// Controlled-direct-effect system. Component 1 targets ψ⁽¹⁾ (the baseline
/// exposure's effect with A2 fixed at zero) with the L1 design; component 2
/// targets ψ⁽²⁾ with the full history design (1, L1, A1, L2).
pub struct CdeSystem {
    spec: TwoPeriodSpec,
    design1: DesignMatrix,
    design2: DesignMatrix,
    pub propensity: [PropensityFit; 2],
    pub lambda_beta: [f64; 2],
    solver1: PreparedOutcomeSolver,
    solver2: PreparedOutcomeSolver,
    variance: VarianceOptions,
    warm: [Option<Vec<f64>>; 2],
}

impl CdeSystem {
    pub fn assemble(spec: TwoPeriodSpec, cfg: &CiConfig) -> Result<Self, InversionError> {
        let n = spec.y.len();
        if spec.a1.len() != n || spec.a2.len() != n || spec.l1.nrows() != n || spec.l2.nrows() != n
        {
            return Err(ExtensionError::BadTwoPeriod { what: "row counts differ" }.into());
        }
        let design1 = DesignMatrix::with_intercept(&spec.l1)
            .map_err(|_| ExtensionError::BadTwoPeriod { what: "invalid period-1 design" })?;
        // Period-2 adjusted design: (L1, A1, L2) plus intercept.
        let k1 = spec.l1.ncols();
        let k2 = spec.l2.ncols();
        let mut hist = Array2::zeros((n, k1 + 1 + k2));
        for j in 0..k1 {
            hist.column_mut(j).assign(&spec.l1.column(j));
        }
        hist.column_mut(k1).assign(&spec.a1);
        for j in 0..k2 {
            hist.column_mut(k1 + 1 + j).assign(&spec.l2.column(j));
        }
        let design2 = DesignMatrix::with_intercept(&hist)
            .map_err(|_| ExtensionError::BadTwoPeriod { what: "invalid period-2 design" })?;

        let a1 = spec.a1.as_slice().expect("contiguous").to_vec();
        let a2 = spec.a2.as_slice().expect("contiguous").to_vec();
        let (prop1, w1) = propensity_pipeline(&design1, &a1, cfg, 3)?;
        let (prop2, w2) = propensity_pipeline(&design2, &a2, cfg, 4)?;

        let y = spec.y.as_slice().expect("contiguous");
        let lambda1 = select_null_lambda(&design1, y, &w1, None, cfg, 4)?;
        let lambda2 = select_null_lambda(&design2, y, &w2, None, cfg, 5)?;
        let solver1 = PreparedOutcomeSolver::new(&design1, &w1, None, lambda1)?;
        let solver2 = PreparedOutcomeSolver::new(&design2, &w2, None, lambda2)?;

        Ok(Self {
            spec,
            design1,
            design2,
            propensity: [prop1, prop2],
            lambda_beta: [lambda1, lambda2],
            solver1,
            solver2,
            variance: VarianceOptions { centered: cfg.centered_variance },
            warm: [None, None],
        })
    }

    /// Period-specific transformed outcomes at ψ.
    fn transforms(&self, psi: [f64; 2]) -> (Array1<f64>, Array1<f64>) {
        let n = self.spec.y.len();
        match self.spec.link {
            LinkFunction::Identity => {
                let h1 = Array1::from_shape_fn(n, |i| {
                    self.spec.y[i] - psi[1] * self.spec.a2[i] - psi[0] * self.spec.a1[i]
                });
                let h2 =
                    Array1::from_shape_fn(n, |i| self.spec.y[i] - psi[1] * self.spec.a2[i]);
                (h1, h2)
            }
            LinkFunction::Log => {
                let h1 = Array1::from_shape_fn(n, |i| {
                    self.spec.y[i]
                        * (-psi[1] * self.spec.a2[i] - psi[0] * self.spec.a1[i]).exp()
                });
                let h2 = Array1::from_shape_fn(n, |i| {
                    self.spec.y[i] * (-psi[1] * self.spec.a2[i]).exp()
                });
                (h1, h2)
            }
        }
    }

    pub fn assemble_inputs(&mut self, psi: [f64; 2]) -> Result<[ScoreInputs; 2], InversionError> {
        let (h1, h2) = self.transforms(psi);
        let param = EffectParameter::new(psi.to_vec());
        let fit1 = self.solver1.solve(
            &self.design1,
            h1.as_slice().expect("contiguous"),
            param.clone(),
            self.warm[0].as_deref(),
        )?;
        let fit2 = self.solver2.solve(
            &self.design2,
            h2.as_slice().expect("contiguous"),
            param,
            self.warm[1].as_deref(),
        )?;
        self.warm[0] = Some(fit1.beta_hat.to_vec());
        self.warm[1] = Some(fit2.beta_hat.to_vec());

        let n = self.spec.y.len();
        let column = |v: &Array1<f64>| Array2::from_shape_fn((n, 1), |(i, _)| v[i]);
        let inputs1 = ScoreInputs {
            h: h1,
            a_terms: column(&self.spec.a1),
            pi_hat: Array2::from_shape_fn((n, 1), |(i, _)| self.propensity[0].pi_hat[i]),
            m_hat: column(&fit1.m_hat),
            modifiers: None,
            nuisances: vec![fit1],
        };
        let inputs2 = ScoreInputs {
            h: h2,
            a_terms: column(&self.spec.a2),
            pi_hat: Array2::from_shape_fn((n, 1), |(i, _)| self.propensity[1].pi_hat[i]),
            m_hat: column(&fit2.m_hat),
            modifiers: None,
            nuisances: vec![fit2],
        };
        Ok([inputs1, inputs2])
    }

    pub fn evaluate_at(&mut self, psi: [f64; 2]) -> Result<ScoreEvaluation, InversionError> {
        let [i1, i2] = self.assemble_inputs(psi)?;
        let s1 = i1.scores()?;
        let s2 = i2.scores()?;
        let n = self.spec.y.len();
        let scores = Array2::from_shape_fn((n, 2), |(i, j)| {
            if j == 0 {
                s1[[i, 0]]
            } else {
                s2[[i, 0]]
            }
        });
        Ok(test_statistic_with(&scores, self.variance)?)
    }
}

impl ScoreSystem for CdeSystem {
    fn evaluate(&mut self, psi: [f64; 2]) -> Result<ScoreEvaluation, InversionError> {
        self.evaluate_at(psi)
    }
}
