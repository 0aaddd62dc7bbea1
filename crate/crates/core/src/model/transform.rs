//! Flat unconstrained parameter vector.
//!
//! Layout, in order:
//!
//! 1. one block per class `g = 1..G`:
//!    `beta[0..p]`, `log sigma2`, `log weibull_shape`, `weibull_log_scale`,
//!    `gamma[0..q]`, `alpha`, `log re_variances[0..r]`;
//! 2. membership intercepts `psi0[0..G-1]`;
//! 3. membership coefficients `psi[g][0..m]` for `g = 1..G-1`, row-major;
//! 4. standardized random effects `z[i][g][0..r]`, subject-major then class,
//!    with `b = sqrt(re_variance) * z`.
//!
//! Positive parameters are log-transformed. The log-Jacobian of the inverse
//! transform is the sum of those unconstrained coordinates plus
//! `0.5 log re_variance` for every random effect.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::model::{ClassParameters, LatentEffects, ModelSpec, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_classes: usize,
    pub n_fixed: usize,
    pub n_random: usize,
    pub n_survival: usize,
    pub n_membership: usize,
    pub n_subjects: usize,
}

impl Layout {
    pub fn new(spec: &ModelSpec, n_subjects: usize) -> Self {
        Self {
            n_classes: spec.n_classes,
            n_fixed: spec.fixed_basis.len(),
            n_random: spec.random_basis.len(),
            n_survival: spec.survival_covariates.len(),
            n_membership: spec.membership_covariates.len(),
            n_subjects,
        }
    }

    pub fn class_block_len(&self) -> usize {
        self.n_fixed + self.n_survival + self.n_random + 4
    }

    pub fn class_block(&self, g: usize) -> Range<usize> {
        let start = g * self.class_block_len();
        start..start + self.class_block_len()
    }

    // Offsets within a class block.
    pub fn beta_offset(&self) -> usize {
        0
    }
    pub fn log_sigma2_offset(&self) -> usize {
        self.n_fixed
    }
    pub fn log_shape_offset(&self) -> usize {
        self.n_fixed + 1
    }
    pub fn log_scale_offset(&self) -> usize {
        self.n_fixed + 2
    }
    pub fn gamma_offset(&self) -> usize {
        self.n_fixed + 3
    }
    pub fn alpha_offset(&self) -> usize {
        self.n_fixed + 3 + self.n_survival
    }
    pub fn log_re_var_offset(&self) -> usize {
        self.n_fixed + 4 + self.n_survival
    }

    pub fn psi0_start(&self) -> usize {
        self.n_classes * self.class_block_len()
    }

    pub fn psi_start(&self) -> usize {
        self.psi0_start() + self.n_classes - 1
    }

    /// Number of non-latent coordinates.
    pub fn n_params(&self) -> usize {
        self.psi_start() + (self.n_classes - 1) * self.n_membership
    }

    pub fn latent_start(&self) -> usize {
        self.n_params()
    }

    pub fn latent_block(&self, i: usize, g: usize) -> Range<usize> {
        let start = self.latent_start() + (i * self.n_classes + g) * self.n_random;
        start..start + self.n_random
    }

    pub fn latent_subject(&self, i: usize) -> Range<usize> {
        let w = self.n_classes * self.n_random;
        let start = self.latent_start() + i * w;
        start..start + w
    }

    pub fn dim(&self) -> usize {
        self.n_params() + self.n_subjects * self.n_classes * self.n_random
    }

    /// Indices of log-transformed coordinates among the non-latent ones.
    pub fn positive_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_classes * (2 + self.n_random));
        for g in 0..self.n_classes {
            let base = self.class_block(g).start;
            out.push(base + self.log_sigma2_offset());
            out.push(base + self.log_shape_offset());
            out.extend((0..self.n_random).map(|k| base + self.log_re_var_offset() + k));
        }
        out
    }

    pub fn log_jacobian(&self, theta: &[f64]) -> f64 {
        let mut total: f64 = self.positive_indices().iter().map(|&i| theta[i]).sum();
        for g in 0..self.n_classes {
            let at = self.class_block(g).start + self.log_re_var_offset();
            total += 0.5 * self.n_subjects as f64 * theta[at..at + self.n_random].iter().sum::<f64>();
        }
        total
    }

    /// Coordinate names on the constrained scale, non-latent parameters only.
    /// Classes are numbered from 1.
    pub fn parameter_names(&self, spec: &ModelSpec) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_params());
        for g in 1..=self.n_classes {
            names.extend(spec.fixed_basis.iter().map(|t| format!("beta.{g}.{t}")));
            names.push(format!("sigma2.{g}"));
            names.push(format!("shape.{g}"));
            names.push(format!("log_scale.{g}"));
            names.extend(spec.survival_covariates.iter().map(|c| format!("gamma.{g}.{c}")));
            names.push(format!("alpha.{g}"));
            names.extend(spec.random_basis.iter().map(|t| format!("re_var.{g}.{t}")));
        }
        names.extend((1..self.n_classes).map(|g| format!("psi0.{g}")));
        for g in 1..self.n_classes {
            names.extend(spec.membership_covariates.iter().map(|c| format!("psi.{g}.{c}")));
        }
        names
    }

    /// Map the non-latent prefix of `theta` to the constrained scale in place
    /// order.
    pub fn constrain_params(&self, theta: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&theta[..self.n_params()]);
        for i in self.positive_indices() {
            out[i] = theta[i].exp();
        }
    }

    /// Random effects `b = exp(u / 2) z` of every subject and class, subject
    /// major.
    pub fn random_effects(&self, theta: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let r = self.n_random;
        for i in 0..self.n_subjects {
            for g in 0..self.n_classes {
                let rv = self.class_block(g).start + self.log_re_var_offset();
                let z = &theta[self.latent_block(i, g)];
                out.extend(z.iter().zip(&theta[rv..rv + r]).map(|(z, u)| (0.5 * u).exp() * z));
            }
        }
    }
}

fn finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Domain(format!("{what} is not finite ({x})")))
    }
}

fn log_positive(x: f64, what: &str) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x.ln())
    } else {
        Err(Error::Domain(format!("{what} must be positive and finite ({x})")))
    }
}

/// Flatten constrained parameters and random effects into the unconstrained
/// vector.
pub fn transform(
    params: &Parameters,
    latent: &LatentEffects,
    spec: &ModelSpec,
) -> Result<Vec<f64>> {
    params.check(spec)?;
    let layout = Layout::new(spec, latent.n_subjects);
    if latent.n_classes != spec.n_classes || latent.n_random != spec.n_random() {
        return Err(Error::Dimension("latent effects do not match model spec".into()));
    }
    let mut theta = Vec::with_capacity(layout.dim());
    for c in &params.classes {
        for &b in &c.beta {
            theta.push(finite(b, "beta")?);
        }
        theta.push(log_positive(c.sigma2, "sigma2")?);
        theta.push(log_positive(c.weibull_shape, "weibull_shape")?);
        theta.push(finite(c.weibull_log_scale, "weibull_log_scale")?);
        for &x in &c.gamma {
            theta.push(finite(x, "gamma")?);
        }
        theta.push(finite(c.alpha, "alpha")?);
        for &v in &c.re_variances {
            theta.push(log_positive(v, "re_variance")?);
        }
    }
    for &x in &params.psi0 {
        theta.push(finite(x, "psi0")?);
    }
    for row in &params.psi {
        for &x in row {
            theta.push(finite(x, "psi")?);
        }
    }
    for i in 0..latent.n_subjects {
        for (g, c) in params.classes.iter().enumerate() {
            for (&b, &v) in latent.block(i, g).iter().zip(&c.re_variances) {
                theta.push(finite(b / v.sqrt(), "random effect")?);
            }
        }
    }
    debug_assert_eq!(theta.len(), layout.dim());
    Ok(theta)
}

/// Inverse of [`transform`]; also returns the log-Jacobian.
pub fn untransform(
    theta: &[f64],
    spec: &ModelSpec,
    n_subjects: usize,
) -> Result<(Parameters, LatentEffects, f64)> {
    let layout = Layout::new(spec, n_subjects);
    if theta.len() != layout.dim() {
        return Err(Error::Dimension(format!(
            "theta has length {}, layout expects {}",
            theta.len(),
            layout.dim()
        )));
    }
    if let Some(x) = theta.iter().find(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("non-finite coordinate {x}")));
    }
    let classes: Vec<ClassParameters> = (0..layout.n_classes)
        .map(|g| {
            let blk = &theta[layout.class_block(g)];
            let gamma_at = layout.gamma_offset();
            let re_at = layout.log_re_var_offset();
            ClassParameters {
                beta: blk[..layout.n_fixed].to_vec(),
                sigma2: blk[layout.log_sigma2_offset()].exp(),
                weibull_shape: blk[layout.log_shape_offset()].exp(),
                weibull_log_scale: blk[layout.log_scale_offset()],
                gamma: blk[gamma_at..gamma_at + layout.n_survival].to_vec(),
                alpha: blk[layout.alpha_offset()],
                re_variances: blk[re_at..re_at + layout.n_random]
                    .iter()
                    .map(|u| u.exp())
                    .collect(),
            }
        })
        .collect();
    let psi0 = theta[layout.psi0_start()..layout.psi_start()].to_vec();
    let psi = (0..layout.n_classes - 1)
        .map(|g| {
            let start = layout.psi_start() + g * layout.n_membership;
            theta[start..start + layout.n_membership].to_vec()
        })
        .collect();
    let mut latent = LatentEffects::zeros(n_subjects, layout.n_classes, layout.n_random);
    for i in 0..n_subjects {
        for (g, c) in classes.iter().enumerate() {
            let z = &theta[layout.latent_block(i, g)];
            for ((b, z), v) in latent.block_mut(i, g).iter_mut().zip(z).zip(&c.re_variances) {
                *b = v.sqrt() * z;
            }
        }
    }
    let params = Parameters {
        classes,
        psi0,
        psi,
    };
    Ok((params, latent, layout.log_jacobian(theta)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BasisTerm;
    use proptest::prelude::*;

    fn spec(g: usize) -> ModelSpec {
        ModelSpec {
            n_classes: g,
            fixed_basis: vec![
                BasisTerm::Intercept,
                BasisTerm::TimePower(1),
                BasisTerm::Covariate("male".into()),
            ],
            random_basis: vec![BasisTerm::Intercept, BasisTerm::TimePower(1)],
            survival_covariates: vec!["age".into()],
            membership_covariates: vec!["male".into(), "age".into()],
            quadrature_order: 15,
        }
    }

    #[test]
    fn sigma2_log_coordinate() {
        let s = spec(1);
        let layout = Layout::new(&s, 0);
        let mut theta = vec![0.0; layout.dim()];
        theta[layout.log_sigma2_offset()] = 0.4761f64.ln();
        let (params, _, logj) = untransform(&theta, &s, 0).unwrap();
        assert!((params.classes[0].sigma2 - 0.4761).abs() < 1e-15);
        assert!((0.4761f64.ln() - (-0.742127)).abs() < 1e-6);
        assert!((logj - 0.4761f64.ln()).abs() < 1e-15);

        theta[layout.log_sigma2_offset()] = 0.0;
        let (params, _, _) = untransform(&theta, &s, 0).unwrap();
        assert_eq!(params.classes[0].sigma2, 1.0);
    }

    #[test]
    fn names_match_layout() {
        let s = spec(3);
        let layout = Layout::new(&s, 4);
        let names = layout.parameter_names(&s);
        assert_eq!(names.len(), layout.n_params());
        assert_eq!(names[0], "beta.1.intercept");
        assert_eq!(names[layout.class_block(1).start + layout.alpha_offset()], "alpha.2");
        assert_eq!(names[layout.psi_start()], "psi.1.male");
        assert_eq!(layout.dim(), layout.n_params() + 4 * 3 * 2);
    }

    #[test]
    fn non_finite_rejected() {
        let s = spec(2);
        let layout = Layout::new(&s, 1);
        let mut theta = vec![0.0; layout.dim()];
        theta[3] = f64::NAN;
        assert!(untransform(&theta, &s, 1).is_err());
        assert!(untransform(&theta[1..], &s, 1).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(seed in proptest::collection::vec(-3.0f64..3.0, 64), g in 1usize..4) {
            let s = spec(g);
            let layout = Layout::new(&s, 2);
            let theta: Vec<f64> = (0..layout.dim()).map(|i| seed[i % seed.len()] * (1.0 + i as f64 * 0.01)).collect();
            let (params, latent, logj) = untransform(&theta, &s, 2).unwrap();
            let back = transform(&params, &latent, &s).unwrap();
            for (a, b) in theta.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
            let expected: f64 = params.classes.iter().map(|c| {
                c.sigma2.ln() + c.weibull_shape.ln() + 2.0 * c.re_variances.iter().map(|v| v.ln()).sum::<f64>()
            }).sum();
            prop_assert!((logj - expected).abs() < 1e-12);
            let mut b = Vec::new();
            layout.random_effects(&theta, &mut b);
            prop_assert_eq!(b.len(), latent.values.len());
            for (x, y) in b.iter().zip(&latent.values) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }
}
