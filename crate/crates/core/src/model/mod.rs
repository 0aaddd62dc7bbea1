//! Data model and log-density components of the joint latent class model.
//!
//! Each latent class `g` carries a Gaussian linear mixed model for the
//! longitudinal marker and a Weibull proportional hazards model whose log
//! hazard includes `alpha_g` times the current value of the class-specific
//! marker trajectory. Class membership follows a softmax in the membership
//! covariates with the last class as reference.

pub mod basis;
pub mod density;
pub mod joint;
pub mod prior;
pub mod quadrature;
pub mod transform;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use basis::{build_design_row, BasisTerm};
pub use density::{
    cumulative_hazard, current_value, log_hazard, log_membership_probs, log_posterior_unconstrained,
    log_prior, longitudinal_loglik, subject_marginal_loglik, survival_loglik,
};
pub use joint::JointModel;
pub use prior::{Prior, PriorSpec};
pub use quadrature::GaussLegendre;
pub use transform::{transform, untransform, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalRecord {
    pub time: f64,
    pub value: f64,
}

/// One subject's observed data.
///
/// `covariates` holds every time-constant covariate of the subject; the model
/// spec decides which of them enter the longitudinal basis, the hazard, and
/// the membership softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectData {
    pub id: String,
    pub records: Vec<LongitudinalRecord>,
    pub event_time: f64,
    pub event: bool,
    pub covariates: BTreeMap<String, f64>,
}

impl SubjectData {
    pub fn validate(&self) -> Result<()> {
        if !(self.event_time > 0.0 && self.event_time.is_finite()) {
            return Err(Error::Data(format!(
                "subject {}: event time must be positive and finite, got {}",
                self.id, self.event_time
            )));
        }
        let mut prev = 0.0;
        for rec in &self.records {
            if !(rec.time >= 0.0) || !rec.value.is_finite() {
                return Err(Error::Data(format!(
                    "subject {}: invalid record (time {}, value {})",
                    self.id, rec.time, rec.value
                )));
            }
            if rec.time < prev {
                return Err(Error::Data(format!(
                    "subject {}: records not sorted by time",
                    self.id
                )));
            }
            if rec.time > self.event_time {
                return Err(Error::Data(format!(
                    "subject {}: record at time {} after observed time {}",
                    self.id, rec.time, self.event_time
                )));
            }
            prev = rec.time;
        }
        if let Some((name, v)) = self.covariates.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Data(format!(
                "subject {}: covariate {name} is not finite ({v})",
                self.id
            )));
        }
        Ok(())
    }

    pub fn covariate(&self, name: &str) -> Result<f64> {
        self.covariates
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }
}

fn default_quadrature_order() -> usize {
    15
}

/// Structure of a joint latent class model with current-value association.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub n_classes: usize,
    pub fixed_basis: Vec<BasisTerm>,
    pub random_basis: Vec<BasisTerm>,
    #[serde(default)]
    pub survival_covariates: Vec<String>,
    #[serde(default)]
    pub membership_covariates: Vec<String>,
    #[serde(default = "default_quadrature_order")]
    pub quadrature_order: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::Config("n_classes must be at least 1".into()));
        }
        if self.random_basis.is_empty() {
            return Err(Error::Config("random_basis must not be empty".into()));
        }
        if self.quadrature_order < 2 {
            return Err(Error::Config("quadrature_order must be at least 2".into()));
        }
        for term in self.fixed_basis.iter().chain(&self.random_basis) {
            if term.time_power() > basis::MAX_TIME_POWER {
                return Err(Error::Config(format!("unsupported basis term {term}")));
            }
        }
        let unique = |items: Vec<String>, what: &str| -> Result<()> {
            let mut seen = HashSet::new();
            for s in items {
                if !seen.insert(s.clone()) {
                    return Err(Error::Config(format!("duplicate {what} `{s}`")));
                }
            }
            Ok(())
        };
        unique(self.fixed_basis.iter().map(|t| t.to_string()).collect(), "fixed basis term")?;
        unique(self.random_basis.iter().map(|t| t.to_string()).collect(), "random basis term")?;
        unique(self.survival_covariates.clone(), "survival covariate")?;
        unique(self.membership_covariates.clone(), "membership covariate")?;
        Ok(())
    }

    /// Every covariate name the model reads from subject data.
    pub fn referenced_covariates(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut push = |s: &str| {
            if !out.iter().any(|x| x == s) {
                out.push(s.to_string());
            }
        };
        for term in self.fixed_basis.iter().chain(&self.random_basis) {
            if let Some(name) = term.covariate() {
                push(name);
            }
        }
        for name in self.survival_covariates.iter().chain(&self.membership_covariates) {
            push(name);
        }
        out
    }

    pub fn check_subject(&self, subject: &SubjectData) -> Result<()> {
        subject.validate()?;
        for name in self.referenced_covariates() {
            subject.covariate(&name).map_err(|_| {
                Error::Data(format!("subject {}: missing covariate `{name}`", subject.id))
            })?;
        }
        Ok(())
    }

    pub fn n_random(&self) -> usize {
        self.random_basis.len()
    }
}

/// Constrained parameters of one latent class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassParameters {
    pub beta: Vec<f64>,
    pub sigma2: f64,
    /// Weibull shape.
    pub weibull_shape: f64,
    /// Weibull log scale; enters the log hazard additively.
    pub weibull_log_scale: f64,
    pub gamma: Vec<f64>,
    pub alpha: f64,
    /// Diagonal of the random-effect covariance.
    pub re_variances: Vec<f64>,
}

impl ClassParameters {
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        if self.beta.len() != spec.fixed_basis.len()
            || self.gamma.len() != spec.survival_covariates.len()
            || self.re_variances.len() != spec.random_basis.len()
        {
            return Err(Error::Dimension(
                "class parameter lengths do not match model spec".into(),
            ));
        }
        if !(self.sigma2 > 0.0) || !(self.weibull_shape > 0.0) {
            return Err(Error::Domain(
                "sigma2 and weibull_shape must be positive".into(),
            ));
        }
        if self.re_variances.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Domain("random-effect variances must be positive".into()));
        }
        Ok(())
    }
}

/// All model parameters. Membership coefficients are stored for classes
/// `1..G-1`; class `G` is the reference with zero coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub classes: Vec<ClassParameters>,
    pub psi0: Vec<f64>,
    pub psi: Vec<Vec<f64>>,
}

impl Parameters {
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        let g = spec.n_classes;
        if self.classes.len() != g || self.psi0.len() + 1 != g || self.psi.len() + 1 != g {
            return Err(Error::Dimension(format!(
                "parameters describe {} classes, spec has {g}",
                self.classes.len()
            )));
        }
        if self
            .psi
            .iter()
            .any(|row| row.len() != spec.membership_covariates.len())
        {
            return Err(Error::Dimension(
                "membership coefficient rows do not match membership covariates".into(),
            ));
        }
        for c in &self.classes {
            c.check(spec)?;
        }
        Ok(())
    }

    /// Membership linear predictors for covariates `w`, reference class last.
    pub fn membership_predictors(&self, w: &[f64]) -> Vec<f64> {
        let mut eta: Vec<f64> = self
            .psi0
            .iter()
            .zip(&self.psi)
            .map(|(p0, row)| p0 + row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        eta.push(0.0);
        eta
    }
}

/// Class-specific random effects, stored subject-major then class then
/// coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentEffects {
    pub n_subjects: usize,
    pub n_classes: usize,
    pub n_random: usize,
    pub values: Vec<f64>,
}

impl LatentEffects {
    pub fn zeros(n_subjects: usize, n_classes: usize, n_random: usize) -> Self {
        Self {
            n_subjects,
            n_classes,
            n_random,
            values: vec![0.0; n_subjects * n_classes * n_random],
        }
    }

    /// All class blocks for subject `i`.
    pub fn subject(&self, i: usize) -> &[f64] {
        let w = self.n_classes * self.n_random;
        &self.values[i * w..(i + 1) * w]
    }

    pub fn block(&self, i: usize, g: usize) -> &[f64] {
        let start = (i * self.n_classes + g) * self.n_random;
        &self.values[start..start + self.n_random]
    }

    pub fn block_mut(&mut self, i: usize, g: usize) -> &mut [f64] {
        let start = (i * self.n_classes + g) * self.n_random;
        &mut self.values[start..start + self.n_random]
    }
}
