//! Direct log-density evaluation on raw subject data.
//!
//! These functions build design rows on demand and favour clarity over speed.
//! [`crate::model::JointModel`] evaluates the same quantities on pre-built
//! designs for sampling.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::math::{dot, log_sum_exp};
use crate::model::{
    build_design_row, untransform, ClassParameters, GaussLegendre, LatentEffects, ModelSpec,
    Parameters, PriorSpec, SubjectData,
};

/// Log membership probabilities for membership covariates `w`.
pub fn log_membership_probs(psi0: &[f64], psi: &[Vec<f64>], w: &[f64]) -> Result<Vec<f64>> {
    if psi0.len() != psi.len() {
        return Err(Error::Dimension("psi0 and psi disagree on class count".into()));
    }
    if let Some(row) = psi.iter().find(|row| row.len() != w.len()) {
        return Err(Error::Dimension(format!(
            "membership covariates have length {}, coefficients {}",
            w.len(),
            row.len()
        )));
    }
    let mut eta: Vec<f64> = psi0
        .iter()
        .zip(psi)
        .map(|(p0, row)| p0 + dot(row, w))
        .collect();
    eta.push(0.0);
    let lse = log_sum_exp(&eta);
    Ok(eta.into_iter().map(|e| e - lse).collect())
}

fn membership_covariates(subject: &SubjectData, spec: &ModelSpec) -> Result<Vec<f64>> {
    spec.membership_covariates
        .iter()
        .map(|c| subject.covariate(c))
        .collect()
}

/// Conditional marker mean `X(t)'beta + Z(t)'b` for one class.
pub fn current_value(
    subject: &SubjectData,
    class: &ClassParameters,
    b: &[f64],
    t: f64,
    spec: &ModelSpec,
) -> Result<f64> {
    let x = build_design_row(&spec.fixed_basis, &subject.covariates, t)?;
    let z = build_design_row(&spec.random_basis, &subject.covariates, t)?;
    if x.len() != class.beta.len() || z.len() != b.len() {
        return Err(Error::Dimension("design and coefficient lengths differ".into()));
    }
    Ok(dot(&x, &class.beta) + dot(&z, b))
}

/// Gaussian log likelihood of the subject's marker values given class and
/// random effects.
pub fn longitudinal_loglik(
    subject: &SubjectData,
    class: &ClassParameters,
    b: &[f64],
    spec: &ModelSpec,
) -> Result<f64> {
    if !(class.sigma2 > 0.0) {
        return Err(Error::Domain(format!("sigma2 must be positive, got {}", class.sigma2)));
    }
    let norm = -0.5 * (2.0 * PI * class.sigma2).ln();
    let mut total = 0.0;
    for rec in &subject.records {
        let mu = current_value(subject, class, b, rec.time, spec)?;
        let r = rec.value - mu;
        total += norm - 0.5 * r * r / class.sigma2;
    }
    Ok(total)
}

fn survival_linear_predictor(
    subject: &SubjectData,
    class: &ClassParameters,
    spec: &ModelSpec,
) -> Result<f64> {
    let mut eta = class.weibull_log_scale;
    for (name, g) in spec.survival_covariates.iter().zip(&class.gamma) {
        eta += g * subject.covariate(name)?;
    }
    Ok(eta)
}

/// Log hazard at `t > 0`:
/// `log shape + (shape - 1) log t + log_scale + W'gamma + alpha * mu(t)`.
pub fn log_hazard(
    subject: &SubjectData,
    class: &ClassParameters,
    b: &[f64],
    t: f64,
    spec: &ModelSpec,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("hazard evaluated at non-positive time {t}")));
    }
    let shape = class.weibull_shape;
    Ok(shape.ln()
        + (shape - 1.0) * t.ln()
        + survival_linear_predictor(subject, class, spec)?
        + class.alpha * current_value(subject, class, b, t, spec)?)
}

/// Cumulative hazard on `[0, upper]` by Gauss–Legendre quadrature on the
/// graded nodes `s = upper * y^(2 / shape)`, exact whenever the current
/// value is constant in time.
pub fn cumulative_hazard(
    subject: &SubjectData,
    class: &ClassParameters,
    b: &[f64],
    upper: f64,
    rule: &GaussLegendre,
    spec: &ModelSpec,
) -> Result<f64> {
    if !(upper > 0.0) {
        return Err(Error::Domain(format!(
            "cumulative hazard needs a positive upper limit, got {upper}"
        )));
    }
    let power = GaussLegendre::weibull_power(class.weibull_shape);
    let mut total = 0.0;
    for (s, w) in rule.mapped_power(upper, power) {
        total += w * log_hazard(subject, class, b, s, spec)?.exp();
    }
    Ok(total)
}

/// `event * log h(T) - H(T)`.
pub fn survival_loglik(
    subject: &SubjectData,
    class: &ClassParameters,
    b: &[f64],
    rule: &GaussLegendre,
    spec: &ModelSpec,
) -> Result<f64> {
    let t = subject.event_time;
    let cum = cumulative_hazard(subject, class, b, t, rule, spec)?;
    let event_term = if subject.event {
        log_hazard(subject, class, b, t, spec)?
    } else {
        0.0
    };
    Ok(event_term - cum)
}

/// Per-class joint log terms `log pi_g + log p(y | g) + log p(T, event | g)`.
pub fn class_log_terms(
    subject: &SubjectData,
    params: &Parameters,
    b_subject: &[f64],
    rule: &GaussLegendre,
    spec: &ModelSpec,
) -> Result<Vec<f64>> {
    let r = spec.n_random();
    if b_subject.len() != spec.n_classes * r {
        return Err(Error::Dimension(format!(
            "random effects for subject {} have length {}, expected {}",
            subject.id,
            b_subject.len(),
            spec.n_classes * r
        )));
    }
    let w = membership_covariates(subject, spec)?;
    let log_pi = log_membership_probs(&params.psi0, &params.psi, &w)?;
    params
        .classes
        .iter()
        .enumerate()
        .map(|(g, class)| {
            let b = &b_subject[g * r..(g + 1) * r];
            Ok(log_pi[g]
                + longitudinal_loglik(subject, class, b, spec)?
                + survival_loglik(subject, class, b, rule, spec)?)
        })
        .collect()
}

/// Subject log likelihood with the class label summed out.
pub fn subject_marginal_loglik(
    subject: &SubjectData,
    params: &Parameters,
    b_subject: &[f64],
    spec: &ModelSpec,
) -> Result<f64> {
    let rule = GaussLegendre::new(spec.quadrature_order)?;
    let terms = class_log_terms(subject, params, b_subject, &rule, spec)?;
    Ok(log_sum_exp(&terms))
}

/// Log prior of all parameters plus the Gaussian random-effect densities.
pub fn log_prior(params: &Parameters, latent: &LatentEffects, priors: &PriorSpec) -> f64 {
    let mut lp = 0.0;
    for c in &params.classes {
        lp += c.beta.iter().map(|&x| priors.beta.log_density(x)).sum::<f64>();
        lp += priors.sigma2.log_density(c.sigma2);
        lp += priors.weibull_shape.log_density(c.weibull_shape);
        lp += priors.weibull_log_scale.log_density(c.weibull_log_scale);
        lp += c.gamma.iter().map(|&x| priors.gamma.log_density(x)).sum::<f64>();
        lp += priors.alpha.log_density(c.alpha);
        lp += c
            .re_variances
            .iter()
            .map(|&v| priors.re_variance.log_density(v))
            .sum::<f64>();
    }
    lp += params.psi0.iter().map(|&x| priors.psi.log_density(x)).sum::<f64>();
    lp += params
        .psi
        .iter()
        .flatten()
        .map(|&x| priors.psi.log_density(x))
        .sum::<f64>();
    for i in 0..latent.n_subjects {
        for (g, c) in params.classes.iter().enumerate() {
            for (&b, &v) in latent.block(i, g).iter().zip(&c.re_variances) {
                if !(v > 0.0) {
                    return f64::NEG_INFINITY;
                }
                lp += -0.5 * (2.0 * PI * v).ln() - 0.5 * b * b / v;
            }
        }
    }
    lp
}

/// Log posterior density of the unconstrained vector, up to a constant,
/// including the log-Jacobian of the positive-parameter transforms.
pub fn log_posterior_unconstrained(
    theta: &[f64],
    data: &[SubjectData],
    spec: &ModelSpec,
    priors: &PriorSpec,
) -> Result<f64> {
    let (params, latent, log_jac) = untransform(theta, spec, data.len())?;
    let rule = GaussLegendre::new(spec.quadrature_order)?;
    let mut total = log_prior(&params, &latent, priors) + log_jac;
    for (i, subject) in data.iter().enumerate() {
        let terms = class_log_terms(subject, &params, latent.subject(i), &rule, spec)?;
        total += log_sum_exp(&terms);
    }
    if total.is_nan() {
        return Err(Error::Evaluation("log posterior is NaN".into()));
    }
    Ok(total)
}
