//! Fast evaluation of the class-marginalized log posterior and its gradient.
//!
//! Every basis term is `c * t^k` with `k <= 2` and a subject-specific
//! constant `c`, so the marker mean of a subject in a class is a quadratic in
//! time. Likelihood terms and their derivatives then reduce to a handful of
//! moments per subject and class.
//!
//! Survival and membership covariates are centred at their sample means
//! internally. The hazard intercept and membership intercepts of the
//! unconstrained vector are therefore the intercepts at the mean covariate,
//! `log_scale + gamma' mean_w` and `psi0 + psi' mean_x`. Use
//! [`JointModel::to_unconstrained`] and [`JointModel::from_unconstrained`]
//! to move between parameters and this vector.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::model::{
    transform, untransform, BasisTerm, GaussLegendre, LatentEffects, Layout, ModelSpec,
    Parameters, Prior, PriorSpec, SubjectData,
};
use crate::sampler::LogDensity;

const LN_2PI: f64 = 1.8378770664093453;

/// Standard deviation of the jitter around prior centres at initialization.
pub const INIT_SD: f64 = 0.5;

#[derive(Debug, Clone)]
struct Prepared {
    /// `(time power, constant)` per fixed-basis term.
    fixed: Vec<(usize, f64)>,
    random: Vec<(usize, f64)>,
    times: Vec<f64>,
    values: Vec<f64>,
    t: f64,
    log_t: f64,
    event: bool,
    survival: Vec<f64>,
    membership: Vec<f64>,
}

fn polynomial_terms(basis: &[BasisTerm], subject: &SubjectData) -> Result<Vec<(usize, f64)>> {
    basis
        .iter()
        .map(|term| {
            let c = match term.covariate() {
                Some(name) => subject.covariate(name)?,
                None => 1.0,
            };
            Ok((term.time_power() as usize, c))
        })
        .collect()
}

/// Per-class quantities shared by all subjects at one parameter value.
struct ClassState<'a> {
    beta: &'a [f64],
    sigma2: f64,
    log_sigma2: f64,
    shape: f64,
    log_shape: f64,
    log_scale: f64,
    gamma: &'a [f64],
    alpha: f64,
    /// Random-effect standard deviations.
    re_sd: Vec<f64>,
    /// `y_k^(2 / shape)` at the quadrature nodes.
    node_scale: Vec<f64>,
}

/// Marginalized joint model bound to a data set, evaluated on the flat
/// unconstrained vector described in [`Layout`].
#[derive(Debug, Clone)]
pub struct JointModel {
    spec: ModelSpec,
    priors: PriorSpec,
    layout: Layout,
    subjects: Vec<Prepared>,
    ids: Vec<String>,
    survival_center: Vec<f64>,
    membership_center: Vec<f64>,
    log_node_weight: Vec<f64>,
    log_node: Vec<f64>,
}

impl JointModel {
    pub fn new(spec: &ModelSpec, priors: &PriorSpec, data: &[SubjectData]) -> Result<Self> {
        spec.validate()?;
        priors.validate()?;
        let rule = GaussLegendre::new(spec.quadrature_order)?;
        for s in data {
            spec.check_subject(s)?;
        }
        let column_means = |names: &[String]| -> Result<Vec<f64>> {
            names
                .iter()
                .map(|n| {
                    let mut sum = 0.0;
                    for s in data {
                        sum += s.covariate(n)?;
                    }
                    Ok(if data.is_empty() { 0.0 } else { sum / data.len() as f64 })
                })
                .collect()
        };
        let survival_center = column_means(&spec.survival_covariates)?;
        let membership_center = column_means(&spec.membership_covariates)?;
        let mut subjects = Vec::with_capacity(data.len());
        for s in data {
            let fetch = |names: &[String], center: &[f64]| -> Result<Vec<f64>> {
                names
                    .iter()
                    .zip(center)
                    .map(|(n, c)| Ok(s.covariate(n)? - c))
                    .collect()
            };
            subjects.push(Prepared {
                fixed: polynomial_terms(&spec.fixed_basis, s)?,
                random: polynomial_terms(&spec.random_basis, s)?,
                times: s.records.iter().map(|r| r.time).collect(),
                values: s.records.iter().map(|r| r.value).collect(),
                t: s.event_time,
                log_t: s.event_time.ln(),
                event: s.event,
                survival: fetch(&spec.survival_covariates, &survival_center)?,
                membership: fetch(&spec.membership_covariates, &membership_center)?,
            });
        }
        let ys: Vec<f64> = rule.nodes().iter().map(|x| 0.5 * (x + 1.0)).collect();
        Ok(Self {
            spec: spec.clone(),
            priors: priors.clone(),
            layout: Layout::new(spec, data.len()),
            subjects,
            ids: data.iter().map(|s| s.id.clone()).collect(),
            survival_center,
            membership_center,
            log_node_weight: rule
                .weights()
                .iter()
                .zip(&ys)
                .map(|(w, y)| (w * y).ln())
                .collect(),
            log_node: ys.iter().map(|y| y.ln()).collect(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn priors(&self) -> &PriorSpec {
        &self.priors
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.ids
    }

    /// Shift the intercepts of `theta` between the centred parameterization
    /// (`sign = 1`) and the raw one (`sign = -1`), in place.
    fn shift_intercepts(&self, theta: &mut [f64], sign: f64) {
        let l = &self.layout;
        for g in 0..l.n_classes {
            let s = l.class_block(g).start;
            let gamma = s + l.gamma_offset();
            let dot: f64 = (0..l.n_survival).map(|k| theta[gamma + k] * self.survival_center[k]).sum();
            theta[s + l.log_scale_offset()] += sign * dot;
        }
        for g in 0..l.n_classes - 1 {
            let row = l.psi_start() + g * l.n_membership;
            let dot: f64 = (0..l.n_membership).map(|k| theta[row + k] * self.membership_center[k]).sum();
            theta[l.psi0_start() + g] += sign * dot;
        }
    }

    /// Unconstrained vector of `params` and random effects `latent`.
    pub fn to_unconstrained(&self, params: &Parameters, latent: &LatentEffects) -> Result<Vec<f64>> {
        let mut theta = transform(params, latent, &self.spec)?;
        self.shift_intercepts(&mut theta, 1.0);
        Ok(theta)
    }

    /// Parameters, random effects and log Jacobian of `theta`.
    pub fn from_unconstrained(&self, theta: &[f64]) -> Result<(Parameters, LatentEffects, f64)> {
        self.check_len(theta)?;
        untransform(&self.raw_coordinates(theta), &self.spec, self.subjects.len())
    }

    /// `theta` with the intercepts at zero covariates.
    pub fn raw_coordinates(&self, theta: &[f64]) -> Vec<f64> {
        let mut raw = theta.to_vec();
        self.shift_intercepts(&mut raw, -1.0);
        raw
    }

    /// Inverse of [`JointModel::raw_coordinates`].
    pub fn centered_coordinates(&self, raw: &[f64]) -> Vec<f64> {
        let mut theta = raw.to_vec();
        self.shift_intercepts(&mut theta, 1.0);
        theta
    }

    /// [`JointModel::evaluate`] on the vector with raw intercepts, as used by
    /// [`untransform`]. The gradient is with respect to `raw`.
    pub fn evaluate_raw(&self, raw: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        self.check_len(raw)?;
        let theta = self.centered_coordinates(raw);
        let Some(out) = grad else {
            return self.evaluate(&theta, None);
        };
        let value = self.evaluate(&theta, Some(out))?;
        let l = &self.layout;
        for g in 0..l.n_classes {
            let s = l.class_block(g).start;
            let d = out[s + l.log_scale_offset()];
            for k in 0..l.n_survival {
                out[s + l.gamma_offset() + k] += d * self.survival_center[k];
            }
        }
        for g in 0..l.n_classes - 1 {
            let d = out[l.psi0_start() + g];
            let row = l.psi_start() + g * l.n_membership;
            for k in 0..l.n_membership {
                out[row + k] += d * self.membership_center[k];
            }
        }
        Ok(value)
    }

    /// Non-latent parameters on the constrained scale in name order.
    pub fn constrain_params(&self, theta: &[f64], out: &mut Vec<f64>) {
        let mut raw = theta[..self.layout.n_params()].to_vec();
        self.shift_intercepts(&mut raw, -1.0);
        self.layout.constrain_params(&raw, out);
    }

    fn class_states<'a>(&self, theta: &'a [f64]) -> Vec<ClassState<'a>> {
        let l = &self.layout;
        (0..l.n_classes)
            .map(|g| {
                let blk = &theta[l.class_block(g)];
                let log_shape = blk[l.log_shape_offset()];
                let shape = log_shape.exp();
                let grading = GaussLegendre::weibull_power(shape);
                let log_re_var = &blk[l.log_re_var_offset()..l.log_re_var_offset() + l.n_random];
                ClassState {
                    beta: &blk[..l.n_fixed],
                    sigma2: blk[l.log_sigma2_offset()].exp(),
                    log_sigma2: blk[l.log_sigma2_offset()],
                    shape,
                    log_shape,
                    log_scale: blk[l.log_scale_offset()],
                    gamma: &blk[l.gamma_offset()..l.gamma_offset() + l.n_survival],
                    alpha: blk[l.alpha_offset()],
                    re_sd: log_re_var.iter().map(|u| (0.5 * u).exp()).collect(),
                    node_scale: self.log_node.iter().map(|ly| (grading * ly).exp()).collect(),
                }
            })
            .collect()
    }

    fn log_membership(&self, theta: &[f64], subj: &Prepared, out: &mut [f64]) {
        let l = &self.layout;
        let g_last = l.n_classes - 1;
        for g in 0..g_last {
            let row = l.psi_start() + g * l.n_membership;
            let mut eta = theta[l.psi0_start() + g];
            for (c, w) in theta[row..row + l.n_membership].iter().zip(&subj.membership) {
                eta += c * w;
            }
            out[g] = eta;
        }
        out[g_last] = 0.0;
        let lse = log_sum_exp(out);
        for x in out.iter_mut() {
            *x -= lse;
        }
    }

    /// Log likelihood of one subject in one class given its random effects,
    /// longitudinal plus survival. When `grad` is given, it receives the
    /// derivative with respect to the class block (first `block_len`
    /// entries) followed by the random effects.
    fn class_term(
        &self,
        c: &ClassState,
        subj: &Prepared,
        b: &[f64],
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let mut a = [0.0f64; 3];
        for (&(p, x), beta) in subj.fixed.iter().zip(c.beta) {
            a[p] += beta * x;
        }
        for (&(p, z), bl) in subj.random.iter().zip(b) {
            a[p] += bl * z;
        }
        let poly = |t: f64| a[0] + t * (a[1] + t * a[2]);

        let mut ss = 0.0;
        let mut rm = [0.0f64; 3];
        for (&t, &y) in subj.times.iter().zip(&subj.values) {
            let r = y - poly(t);
            ss += r * r;
            rm[0] += r;
            rm[1] += r * t;
            rm[2] += r * t * t;
        }
        let n_obs = subj.times.len() as f64;
        let long = -0.5 * n_obs * (LN_2PI + c.log_sigma2) - 0.5 * ss / c.sigma2;

        let mut eta = c.log_scale;
        for (g, w) in c.gamma.iter().zip(&subj.survival) {
            eta += g * w;
        }
        let base = c.shape * subj.log_t + eta;
        let mut m = [0.0f64; 3];
        let mut lm = [0.0f64; 3];
        for ((&lw, &ly), &q) in self
            .log_node_weight
            .iter()
            .zip(&self.log_node)
            .zip(&c.node_scale)
        {
            let s = subj.t * q;
            let h = (lw + base + c.alpha * poly(s)).exp();
            let hs = h * s;
            let hss = hs * s;
            m[0] += h;
            m[1] += hs;
            m[2] += hss;
            lm[1] += hs * ly;
            lm[2] += hss * ly;
        }
        let cum = m[0];
        let mu_t = poly(subj.t);
        let delta = if subj.event { 1.0 } else { 0.0 };
        let event_term = if subj.event {
            c.log_shape + (c.shape - 1.0) * subj.log_t + eta + c.alpha * mu_t
        } else {
            0.0
        };
        let value = long + event_term - cum;

        if let Some(out) = grad {
            let l = &self.layout;
            let (blk, gb) = out.split_at_mut(l.class_block_len());
            let mut t_pow = [1.0, subj.t, subj.t * subj.t];
            for (p, tp) in t_pow.iter_mut().enumerate() {
                *tp = rm[p] / c.sigma2 + c.alpha * (delta * *tp - m[p]);
            }
            let da = t_pow;
            for (j, &(p, x)) in subj.fixed.iter().enumerate() {
                blk[l.beta_offset() + j] = da[p] * x;
            }
            for (k, &(p, z)) in subj.random.iter().enumerate() {
                gb[k] = da[p] * z;
            }
            blk[l.log_sigma2_offset()] = -0.5 * n_obs + 0.5 * ss / c.sigma2;
            let d_cum_shape = c.shape * subj.log_t * cum
                - 2.0 * c.alpha / c.shape * (a[1] * lm[1] + 2.0 * a[2] * lm[2]);
            blk[l.log_shape_offset()] = delta * (1.0 + c.shape * subj.log_t) - d_cum_shape;
            let d_eta = delta - cum;
            blk[l.log_scale_offset()] = d_eta;
            for (k, w) in subj.survival.iter().enumerate() {
                blk[l.gamma_offset() + k] = d_eta * w;
            }
            let h_mu = a[0] * m[0] + a[1] * m[1] + a[2] * m[2];
            blk[l.alpha_offset()] = delta * mu_t - h_mu;
            for k in 0..l.n_random {
                blk[l.log_re_var_offset() + k] = 0.0;
            }
        }
        value
    }

    fn check_len(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.layout.dim() {
            return Err(Error::Dimension(format!(
                "theta has length {}, model expects {}",
                theta.len(),
                self.layout.dim()
            )));
        }
        Ok(())
    }

    /// Per-class `log pi_g + log p(y_i | g, b_ig) + log p(T_i, event_i | g, b_ig)`
    /// for subject `i`.
    pub fn class_log_terms(&self, theta: &[f64], i: usize) -> Result<Vec<f64>> {
        self.check_len(theta)?;
        let states = self.class_states(theta);
        Ok(self.class_log_terms_with(&states, theta, i))
    }

    fn class_log_terms_with(&self, states: &[ClassState], theta: &[f64], i: usize) -> Vec<f64> {
        let subj = &self.subjects[i];
        let mut out = vec![0.0; self.layout.n_classes];
        let mut b = vec![0.0; self.layout.n_random];
        self.log_membership(theta, subj, &mut out);
        for (g, c) in states.iter().enumerate() {
            self.random_effects(c, theta, i, g, &mut b);
            out[g] += self.class_term(c, subj, &b, None);
        }
        out
    }

    /// `b = sd * z` for subject `i` in class `g`.
    fn random_effects(&self, c: &ClassState, theta: &[f64], i: usize, g: usize, b: &mut [f64]) {
        let z = &theta[self.layout.latent_block(i, g)];
        for ((b, z), sd) in b.iter_mut().zip(z).zip(&c.re_sd) {
            *b = sd * z;
        }
    }

    /// Class-marginalized log likelihood of every subject given the random
    /// effects in `theta`; random-effect densities are not included.
    pub fn pointwise_loglik(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_len(theta)?;
        let states = self.class_states(theta);
        Ok((0..self.subjects.len())
            .map(|i| log_sum_exp(&self.class_log_terms_with(&states, theta, i)))
            .collect())
    }

    /// Prior of the non-latent parameters, evaluated at the raw intercepts.
    fn log_prior_params(&self, theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let l = &self.layout;
        let n = l.n_params();
        let mut raw = theta[..n].to_vec();
        self.shift_intercepts(&mut raw, -1.0);
        let Some(out) = grad else {
            return self.log_prior_raw(&raw, None);
        };
        let mut g_raw = vec![0.0; n];
        let lp = self.log_prior_raw(&raw, Some(&mut g_raw));
        // Transpose of the intercept shift.
        for g in 0..l.n_classes {
            let s = l.class_block(g).start;
            let d = g_raw[s + l.log_scale_offset()];
            for k in 0..l.n_survival {
                g_raw[s + l.gamma_offset() + k] -= d * self.survival_center[k];
            }
        }
        for g in 0..l.n_classes - 1 {
            let d = g_raw[l.psi0_start() + g];
            let row = l.psi_start() + g * l.n_membership;
            for k in 0..l.n_membership {
                g_raw[row + k] -= d * self.membership_center[k];
            }
        }
        for (o, d) in out[..n].iter_mut().zip(&g_raw) {
            *o += d;
        }
        lp
    }

    fn log_prior_raw(&self, theta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let l = &self.layout;
        let p = &self.priors;
        let mut lp = 0.0;
        let mut grad = grad;
        let mut add = |idx: usize, prior: &Prior, positive: bool, lp: &mut f64| {
            let u = theta[idx];
            if positive {
                let x = u.exp();
                *lp += prior.log_density(x) + u;
                if let Some(g) = grad.as_deref_mut() {
                    g[idx] += prior.d_log_density(x) * x + 1.0;
                }
            } else {
                *lp += prior.log_density(u);
                if let Some(g) = grad.as_deref_mut() {
                    g[idx] += prior.d_log_density(u);
                }
            }
        };
        for g in 0..l.n_classes {
            let s = l.class_block(g).start;
            for j in 0..l.n_fixed {
                add(s + l.beta_offset() + j, &p.beta, false, &mut lp);
            }
            add(s + l.log_sigma2_offset(), &p.sigma2, true, &mut lp);
            add(s + l.log_shape_offset(), &p.weibull_shape, true, &mut lp);
            add(s + l.log_scale_offset(), &p.weibull_log_scale, false, &mut lp);
            for k in 0..l.n_survival {
                add(s + l.gamma_offset() + k, &p.gamma, false, &mut lp);
            }
            add(s + l.alpha_offset(), &p.alpha, false, &mut lp);
            for k in 0..l.n_random {
                add(s + l.log_re_var_offset() + k, &p.re_variance, true, &mut lp);
            }
        }
        for idx in l.psi0_start()..l.n_params() {
            add(idx, &p.psi, false, &mut lp);
        }
        lp
    }

    /// Log posterior and, optionally, its gradient. The gradient buffer is
    /// overwritten.
    pub fn evaluate(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> Result<f64> {
        self.check_len(theta)?;
        let l = &self.layout;
        let n_classes = l.n_classes;
        let r = l.n_random;
        let blen = l.class_block_len();
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
        let states = self.class_states(theta);
        let mut total = self.log_prior_params(theta, grad.as_deref_mut());

        let mut log_pi = vec![0.0; n_classes];
        let mut terms = vec![0.0; n_classes];
        let mut b = vec![0.0; n_classes * r];
        let mut scratch = vec![0.0; n_classes * (blen + r)];
        for (i, subj) in self.subjects.iter().enumerate() {
            self.log_membership(theta, subj, &mut log_pi);
            for (g, c) in states.iter().enumerate() {
                let bg = &mut b[g * r..(g + 1) * r];
                self.random_effects(c, theta, i, g, bg);
                let part = grad
                    .is_some()
                    .then(|| &mut scratch[g * (blen + r)..(g + 1) * (blen + r)]);
                terms[g] = log_pi[g] + self.class_term(c, subj, bg, part);
            }
            let lse = log_sum_exp(&terms);
            if lse.is_nan() {
                return Err(Error::Evaluation(format!("NaN likelihood for subject {}", self.ids[i])));
            }
            total += lse;
            if !lse.is_finite() {
                continue;
            }
            let Some(out) = grad.as_deref_mut() else {
                continue;
            };
            for (g, c) in states.iter().enumerate() {
                let w = (terms[g] - lse).exp();
                if g + 1 < n_classes {
                    let d = w - log_pi[g].exp();
                    out[l.psi0_start() + g] += d;
                    let row = l.psi_start() + g * l.n_membership;
                    for (o, x) in out[row..row + l.n_membership].iter_mut().zip(&subj.membership) {
                        *o += d * x;
                    }
                }
                if w == 0.0 {
                    continue;
                }
                let part = &scratch[g * (blen + r)..(g + 1) * (blen + r)];
                let cb = l.class_block(g).start;
                for (o, d) in out[cb..cb + blen].iter_mut().zip(&part[..blen]) {
                    *o += w * d;
                }
                // Chain rule through b = exp(u / 2) z.
                let lb = l.latent_block(i, g).start;
                let rv = cb + l.log_re_var_offset();
                for k in 0..r {
                    let db = w * part[blen + k];
                    out[lb + k] += db * c.re_sd[k];
                    out[rv + k] += 0.5 * db * b[g * r + k];
                }
            }
        }

        let latent = &theta[l.latent_start()..];
        total += latent.iter().map(|z| -0.5 * (LN_2PI + z * z)).sum::<f64>();
        if let Some(out) = grad.as_deref_mut() {
            for (o, z) in out[l.latent_start()..].iter_mut().zip(latent) {
                *o -= z;
            }
        }

        if total.is_nan() {
            return Err(Error::Evaluation("log posterior is NaN".into()));
        }
        Ok(total)
    }

    pub fn log_posterior(&self, theta: &[f64]) -> Result<f64> {
        self.evaluate(theta, None)
    }

    /// Log of likelihood times prior on the constrained scale, i.e. the log
    /// posterior without the transform Jacobian.
    pub fn log_joint_constrained(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.evaluate(theta, None)? - self.layout.log_jacobian(theta))
    }

    /// Dispersed starting point, `N(0, 0.5^2)` noise around crude data-based
    /// values. Prior centres can be wildly off the data (shape 4 with a
    /// unit hazard over times near 15), and chains started there could
    /// run off into degenerate corners of the mixture.
    ///
    /// - marker intercept: the pooled marker mean, jitter `0.5 sd(y)`;
    /// - other marker coefficients: prior centre plus jitter;
    /// - Weibull shape near 1, and the hazard intercept at the crude rate
    ///   `log(events / sum T^shape)` given the other hazard terms;
    /// - `gamma`, `psi` and `alpha` jitter divided by the covariate (or
    ///   marker) standard deviation;
    /// - variances at prior centres with multiplicative jitter;
    /// - random effects `N(0, 0.5^2)`.
    ///
    /// With `init`, the given parameters are used as is.
    pub fn initial_point<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        init: Option<&Parameters>,
    ) -> Result<Vec<f64>> {
        let l = &self.layout;
        let noise = Normal::new(0.0, INIT_SD).expect("valid sd");
        let mut theta = match init {
            Some(params) => {
                let latent = LatentEffects::zeros(l.n_subjects, l.n_classes, l.n_random);
                self.to_unconstrained(params, &latent)?
            }
            None => self.dispersed_parameters(rng, &noise),
        };
        for x in &mut theta[l.latent_start()..] {
            *x = noise.sample(rng);
        }
        Ok(theta)
    }

    fn dispersed_parameters<R: Rng + ?Sized>(&self, rng: &mut R, noise: &Normal<f64>) -> Vec<f64> {
        let l = &self.layout;
        let p = &self.priors;
        let values: Vec<f64> = self.subjects.iter().flat_map(|s| s.values.iter().copied()).collect();
        let (y_mean, y_sd) = spread(&values);
        let column_sd = |k: usize, survival: bool| {
            let col: Vec<f64> = self
                .subjects
                .iter()
                .map(|s| if survival { s.survival[k] } else { s.membership[k] })
                .collect();
            spread(&col).1
        };
        let events = self.subjects.iter().filter(|s| s.event).count().max(1) as f64;
        let intercept = self
            .spec
            .fixed_basis
            .iter()
            .position(|t| t.time_power() == 0 && t.covariate().is_none());

        let mut theta = vec![0.0; l.dim()];
        for g in 0..l.n_classes {
            let s = l.class_block(g).start;
            for j in 0..l.n_fixed {
                theta[s + l.beta_offset() + j] = if Some(j) == intercept {
                    y_mean + y_sd * noise.sample(rng)
                } else {
                    p.beta.center() + noise.sample(rng)
                };
            }
            theta[s + l.log_sigma2_offset()] = p.sigma2.center().ln() + noise.sample(rng);
            for k in 0..l.n_random {
                theta[s + l.log_re_var_offset() + k] =
                    p.re_variance.center().ln() + noise.sample(rng);
            }
            for k in 0..l.n_survival {
                theta[s + l.gamma_offset() + k] =
                    p.gamma.center() + noise.sample(rng) / column_sd(k, true);
            }
            let alpha = p.alpha.center() + noise.sample(rng) / y_sd;
            theta[s + l.alpha_offset()] = alpha;
            let log_shape = noise.sample(rng);
            theta[s + l.log_shape_offset()] = log_shape;
            let shape = log_shape.exp();
            let exposure: f64 = self.subjects.iter().map(|s| (shape * s.log_t).exp()).sum();
            theta[s + l.log_scale_offset()] =
                (events / exposure).ln() - alpha * y_mean + noise.sample(rng);
        }
        let psi = l.psi0_start();
        for (i, x) in theta[psi..l.n_params()].iter_mut().enumerate() {
            let sd = if i < l.n_classes - 1 {
                1.0
            } else {
                column_sd((i - (l.n_classes - 1)) % l.n_membership.max(1), false)
            };
            *x = p.psi.center() + noise.sample(rng) / sd;
        }
        theta
    }
}

/// Mean and standard deviation, with the deviation floored away from zero.
fn spread(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 1.0);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    let sd = v.sqrt();
    (m, if sd > 1e-8 { sd } else { 1.0 })
}

impl LogDensity for JointModel {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.evaluate(theta, Some(grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{log_posterior_unconstrained, LongitudinalRecord};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    pub(crate) fn toy_data(n: usize, seed: u64) -> Vec<SubjectData> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let t: f64 = rng.random_range(0.5..15.0);
                let n_rec = rng.random_range(0..6);
                let mut times: Vec<f64> = (0..n_rec).map(|_| rng.random_range(0.0..t)).collect();
                times.sort_by(f64::total_cmp);
                let mut covariates = BTreeMap::new();
                covariates.insert("male".to_string(), (i % 2) as f64);
                covariates.insert("age".to_string(), rng.random_range(-1.5..1.5));
                SubjectData {
                    id: format!("s{i}"),
                    records: times
                        .into_iter()
                        .map(|time| LongitudinalRecord {
                            time,
                            value: rng.random_range(-3.0..3.0),
                        })
                        .collect(),
                    event_time: t,
                    event: rng.random_bool(0.5),
                    covariates,
                }
            })
            .collect()
    }

    pub(crate) fn toy_spec(g: usize) -> ModelSpec {
        ModelSpec {
            n_classes: g,
            fixed_basis: vec![
                BasisTerm::Intercept,
                BasisTerm::TimePower(1),
                BasisTerm::Covariate("male".into()),
                BasisTerm::TimePower(2),
            ],
            random_basis: vec![BasisTerm::Intercept, BasisTerm::TimeCovariateInteraction(1, "male".into())],
            survival_covariates: vec!["age".into()],
            membership_covariates: vec!["male".into(), "age".into()],
            quadrature_order: 15,
        }
    }

    #[test]
    fn matches_reference_density() {
        let data = toy_data(12, 3);
        for g in 1..=3 {
            let spec = toy_spec(g);
            let priors = PriorSpec::simulation_default(g);
            let model = JointModel::new(&spec, &priors, &data).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(g as u64);
            for _ in 0..5 {
                let mut theta = model.initial_point(&mut rng, None).unwrap();
                for x in theta.iter_mut() {
                    *x *= 0.3;
                }
                let fast = model.log_posterior(&theta).unwrap();
                let raw = model.raw_coordinates(&theta);
                let slow = log_posterior_unconstrained(&raw, &data, &spec, &priors).unwrap();
                assert!(((fast - slow) / slow).abs() < 1e-12, "{fast} vs {slow}");
            }
        }
    }

    #[test]
    fn pointwise_sums_with_priors_to_posterior() {
        let data = toy_data(6, 9);
        let spec = toy_spec(2);
        let priors = PriorSpec::simulation_default(2);
        let model = JointModel::new(&spec, &priors, &data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut theta = model.initial_point(&mut rng, None).unwrap();
        theta.iter_mut().for_each(|x| *x *= 0.2);
        let pw: f64 = model.pointwise_loglik(&theta).unwrap().iter().sum();
        let (params, latent, logj) = model.from_unconstrained(&theta).unwrap();
        let prior = crate::model::log_prior(&params, &latent, &priors);
        let lp = model.log_posterior(&theta).unwrap();
        assert!((pw + prior + logj - lp).abs() < 1e-9 * lp.abs());
    }

    #[test]
    fn missing_covariate_rejected() {
        let mut data = toy_data(2, 1);
        data[1].covariates.remove("age");
        let spec = toy_spec(2);
        assert!(JointModel::new(&spec, &PriorSpec::simulation_default(2), &data).is_err());
    }
}
