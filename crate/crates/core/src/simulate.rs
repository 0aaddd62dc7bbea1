//! Synthetic data for the two simulation settings.
//!
//! Setting I draws class labels from fixed proportions; Setting II draws them
//! from a softmax in subject covariates. Event times are drawn by inverting
//! the cumulative hazard, which includes the current value of the marker.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Exp1, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::softmax_in_place;
use crate::model::{
    current_value, BasisTerm, ClassParameters, GaussLegendre, LatentEffects, LongitudinalRecord,
    ModelSpec, Parameters, SubjectData,
};
use crate::sampler::chain::{rng_for, stream};

pub const DEFAULT_CENSOR_MAX: f64 = 17.5;
pub const DEFAULT_T_MAX: f64 = 200.0;
pub const DEFAULT_VISIT_JITTER: f64 = 0.25;
/// Absolute tolerance on event times found by bisection.
pub const INVERSION_TOL: f64 = 1e-10;

pub const SCENARIOS: [&str; 7] = [
    "setting1-g1",
    "setting1-g2",
    "setting1-g3",
    "setting2-s1",
    "setting2-s2",
    "setting2-s3",
    "setting2-s4",
];

/// Visits at 0, 1.75, ..., 17.5.
pub fn default_visit_times() -> Vec<f64> {
    (0..=10).map(|k| 1.75 * k as f64).collect()
}

/// How class labels are assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Proportions(Vec<f64>),
    /// Softmax over `covariates` with coefficients for classes `1..G-1`; the
    /// last class is the reference.
    Softmax {
        covariates: Vec<String>,
        psi0: Vec<f64>,
        psi: Vec<Vec<f64>>,
    },
}

impl Membership {
    pub fn n_classes(&self) -> usize {
        match self {
            Membership::Proportions(p) => p.len(),
            Membership::Softmax { psi0, .. } => psi0.len() + 1,
        }
    }

    pub fn covariates(&self) -> &[String] {
        match self {
            Membership::Proportions(_) => &[],
            Membership::Softmax { covariates, .. } => covariates,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Membership::Proportions(p) => {
                if p.is_empty() || p.iter().any(|x| !(*x >= 0.0)) {
                    return Err(Error::Config("class proportions must be non-negative".into()));
                }
                let total: f64 = p.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "class proportions must sum to 1, got {total}"
                    )));
                }
            }
            Membership::Softmax {
                covariates,
                psi0,
                psi,
            } => {
                if psi.len() != psi0.len() || psi.iter().any(|r| r.len() != covariates.len()) {
                    return Err(Error::Dimension(
                        "membership coefficients do not match covariates".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Class probabilities given covariate values in the order of
    /// [`Membership::covariates`].
    pub fn probabilities(&self, w: &[f64]) -> Vec<f64> {
        match self {
            Membership::Proportions(p) => p.clone(),
            Membership::Softmax { psi0, psi, .. } => {
                let mut eta: Vec<f64> = psi0
                    .iter()
                    .zip(psi)
                    .map(|(a, row)| a + row.iter().zip(w).map(|(c, x)| c * x).sum::<f64>())
                    .collect();
                eta.push(0.0);
                softmax_in_place(&mut eta);
                eta
            }
        }
    }

    /// Membership coefficients in the fitted parameterization.
    fn as_coefficients(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        match self {
            Membership::Proportions(p) => {
                let last = p[p.len() - 1].ln();
                let psi0 = p[..p.len() - 1].iter().map(|x| x.ln() - last).collect();
                (psi0, vec![vec![]; p.len() - 1])
            }
            Membership::Softmax { psi0, psi, .. } => (psi0.clone(), psi.clone()),
        }
    }
}

/// Draw a 1-based class label.
pub fn assign_membership<R: Rng + ?Sized>(membership: &Membership, w: &[f64], rng: &mut R) -> u32 {
    let p = membership.probabilities(w);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (g, pg) in p.iter().enumerate() {
        acc += pg;
        if u < acc {
            return g as u32 + 1;
        }
    }
    // Rounding left `acc` slightly below one.
    p.iter().rposition(|x| *x > 0.0).unwrap_or(0) as u32 + 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub n_subjects: usize,
    /// Longitudinal and survival structure of the generating model. Its
    /// membership covariates are those of `membership`.
    pub spec: ModelSpec,
    pub true_params: Parameters,
    pub membership: Membership,
    pub censor_max: f64,
    pub visit_times: Vec<f64>,
    pub visit_jitter: f64,
    pub t_max: f64,
    pub seed: u64,
}

/// Class 1 of the simulation tables.
fn class_one() -> ClassParameters {
    ClassParameters {
        beta: vec![8.03, -0.16, -5.86],
        sigma2: 0.4761,
        weibull_shape: 1.8,
        weibull_log_scale: -4.85,
        gamma: vec![-0.02],
        alpha: 0.38,
        re_variances: vec![0.87, 0.02],
    }
}

fn class_two() -> ClassParameters {
    ClassParameters {
        beta: vec![-8.03, 0.46, 12.2],
        sigma2: 0.4761,
        weibull_shape: 1.4,
        weibull_log_scale: -4.85,
        gamma: vec![0.09],
        alpha: 0.08,
        re_variances: vec![0.02, 0.91],
    }
}

fn class_three() -> ClassParameters {
    ClassParameters {
        beta: vec![0.03, -0.01, -1.96],
        sigma2: 0.4761,
        weibull_shape: 1.8,
        weibull_log_scale: 2.85,
        gamma: vec![-0.12],
        alpha: 0.58,
        re_variances: vec![0.28, 0.31],
    }
}

/// Fixed effects: intercept, time, male. Random: intercept, time. Hazard
/// covariate: age.
pub fn simulation_spec(n_classes: usize, membership_covariates: Vec<String>) -> ModelSpec {
    ModelSpec {
        n_classes,
        fixed_basis: vec![
            BasisTerm::Intercept,
            BasisTerm::TimePower(1),
            BasisTerm::Covariate("male".into()),
        ],
        random_basis: vec![BasisTerm::Intercept, BasisTerm::TimePower(1)],
        survival_covariates: vec!["age".into()],
        membership_covariates,
        quadrature_order: 15,
    }
}

impl ScenarioConfig {
    /// One of [`SCENARIOS`].
    pub fn preset(name: &str, n_subjects: usize, seed: u64) -> Result<Self> {
        let cov = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let (classes, membership) = match name {
            "setting1-g1" => (vec![class_one()], Membership::Proportions(vec![1.0])),
            "setting1-g2" | "setting2-s1" => (
                vec![class_one(), class_two()],
                Membership::Proportions(vec![0.5, 0.5]),
            ),
            "setting1-g3" => (
                vec![class_one(), class_two(), class_three()],
                Membership::Proportions(vec![0.4, 0.35, 0.25]),
            ),
            "setting2-s2" => (
                vec![class_one(), class_two()],
                Membership::Softmax {
                    covariates: cov(&["xtilde"]),
                    psi0: vec![-0.4],
                    psi: vec![vec![1.0]],
                },
            ),
            "setting2-s3" => (
                vec![class_one(), class_two()],
                Membership::Softmax {
                    covariates: cov(&["male", "age"]),
                    psi0: vec![2.0],
                    psi: vec![vec![4.0, -0.1]],
                },
            ),
            "setting2-s4" => (
                vec![class_one(), class_two()],
                Membership::Softmax {
                    covariates: cov(&["male", "age", "xtilde"]),
                    psi0: vec![2.0],
                    psi: vec![vec![4.0, -0.1, 1.0]],
                },
            ),
            other => {
                return Err(Error::Config(format!(
                    "unknown scenario `{other}`; expected one of {}",
                    SCENARIOS.join(", ")
                )))
            }
        };
        let spec = simulation_spec(classes.len(), membership.covariates().to_vec());
        let (psi0, psi) = membership.as_coefficients();
        let config = Self {
            name: name.to_string(),
            n_subjects,
            spec,
            true_params: Parameters { classes, psi0, psi },
            membership,
            censor_max: DEFAULT_CENSOR_MAX,
            visit_times: default_visit_times(),
            visit_jitter: DEFAULT_VISIT_JITTER,
            t_max: DEFAULT_T_MAX,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::Config("number of subjects must be positive".into()));
        }
        if !(self.censor_max > 0.0) {
            return Err(Error::Config("censor_max must be positive".into()));
        }
        if !(self.t_max >= self.censor_max) {
            return Err(Error::Config("t_max must be at least censor_max".into()));
        }
        if !(self.visit_jitter >= 0.0) {
            return Err(Error::Config("visit jitter must be non-negative".into()));
        }
        self.spec.validate()?;
        self.membership.validate()?;
        if self.membership.n_classes() != self.spec.n_classes {
            return Err(Error::Config("membership and spec disagree on the class count".into()));
        }
        self.true_params.check(&self.spec)
    }
}

/// Quadratic-in-time log hazard of one subject in one class:
/// `log shape + (shape - 1) log t + eta + alpha * (a0 + a1 t + a2 t^2)`,
/// with the graded quadrature nodes for its shape cached on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct HazardCurve {
    shape: f64,
    /// `log shape + eta + alpha * a0`.
    offset: f64,
    alpha_a1: f64,
    alpha_a2: f64,
    /// Nodes and weights for the unit interval.
    unit_rule: Vec<(f64, f64)>,
}

impl HazardCurve {
    pub fn new(
        subject: &SubjectData,
        class: &ClassParameters,
        b: &[f64],
        spec: &ModelSpec,
        rule: &GaussLegendre,
    ) -> Result<Self> {
        // Basis terms carry at most t^2, so three points fix the marker mean.
        let m0 = current_value(subject, class, b, 0.0, spec)?;
        let m1 = current_value(subject, class, b, 1.0, spec)?;
        let m2 = current_value(subject, class, b, 2.0, spec)?;
        let a2 = 0.5 * (m2 - 2.0 * m1 + m0);
        let a1 = m1 - m0 - a2;
        let mut eta = class.weibull_log_scale;
        for (name, g) in spec.survival_covariates.iter().zip(&class.gamma) {
            eta += g * subject.covariate(name)?;
        }
        let shape = class.weibull_shape;
        Ok(Self {
            shape,
            offset: shape.ln() + eta + class.alpha * m0,
            alpha_a1: class.alpha * a1,
            alpha_a2: class.alpha * a2,
            unit_rule: rule.mapped_power(1.0, GaussLegendre::weibull_power(shape)).collect(),
        })
    }

    pub fn log_hazard(&self, t: f64) -> f64 {
        self.offset + (self.shape - 1.0) * t.ln() + t * (self.alpha_a1 + self.alpha_a2 * t)
    }

    /// Cumulative hazard on the same graded nodes used in fitting.
    pub fn cumulative(&self, upper: f64) -> f64 {
        if upper <= 0.0 {
            return 0.0;
        }
        upper
            * self
                .unit_rule
                .iter()
                .map(|(y, w)| w * self.log_hazard(upper * y).exp())
                .sum::<f64>()
    }

    /// Smallest `t` in `[0, t_max]` with `H(t) = target`, to
    /// [`INVERSION_TOL`]; `t_max` when `H(t_max) < target`.
    pub fn invert(&self, target: f64, t_max: f64) -> f64 {
        if self.cumulative(t_max) < target {
            return t_max;
        }
        let (mut lo, mut hi) = (0.0, t_max);
        while hi - lo > INVERSION_TOL {
            let mid = 0.5 * (lo + hi);
            if self.cumulative(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Event time for a subject in `class` with random effects `b`: solves
/// `H(t) = e` for `e ~ Exp(1)`.
pub fn sample_event_time<R: Rng + ?Sized>(
    subject: &SubjectData,
    class: &ClassParameters,
    b: &[f64],
    spec: &ModelSpec,
    rule: &GaussLegendre,
    rng: &mut R,
    t_max: f64,
) -> Result<f64> {
    let curve = HazardCurve::new(subject, class, b, spec, rule)?;
    let e: f64 = Exp1.sample(rng);
    Ok(curve.invert(e, t_max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedDataset {
    pub subjects: Vec<SubjectData>,
    /// 1-based generating classes.
    pub true_labels: Vec<u32>,
    /// Random effects of the generating class in block `g = label - 1`; other
    /// blocks are zero.
    pub true_random_effects: LatentEffects,
}

/// Simulate one dataset. Subject `i` draws from its own random stream, so a
/// larger `n` extends a smaller dataset.
pub fn simulate_dataset(config: &ScenarioConfig) -> Result<SimulatedDataset> {
    config.validate()?;
    let spec = &config.spec;
    let rule = GaussLegendre::new(spec.quadrature_order)?;
    let n = config.n_subjects;
    let n_random = spec.n_random();
    let mut latent = LatentEffects::zeros(n, spec.n_classes, n_random);
    let mut subjects = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);

    let male = Bernoulli::new(0.5).expect("valid probability");
    let age = Normal::new(45.0, 15.7).expect("valid sd");
    let std_normal = Normal::new(0.0, 1.0).expect("valid sd");
    let censor = Uniform::new(0.0, config.censor_max).map_err(|e| Error::Config(e.to_string()))?;

    for i in 0..n {
        let mut rng = rng_for(config.seed, stream::SIMULATE, i as u64);
        let mut covariates = BTreeMap::new();
        covariates.insert("male".to_string(), if male.sample(&mut rng) { 1.0 } else { 0.0 });
        covariates.insert("age".to_string(), age.sample(&mut rng));
        covariates.insert("xtilde".to_string(), std_normal.sample(&mut rng));

        let w: Vec<f64> = config
            .membership
            .covariates()
            .iter()
            .map(|c| {
                covariates
                    .get(c)
                    .copied()
                    .ok_or_else(|| Error::UnknownCovariate(c.clone()))
            })
            .collect::<Result<_>>()?;
        let label = assign_membership(&config.membership, &w, &mut rng);
        let g = label as usize - 1;
        let class = &config.true_params.classes[g];

        let b: Vec<f64> = class
            .re_variances
            .iter()
            .map(|v| v.sqrt() * std_normal.sample(&mut rng))
            .collect();
        latent.block_mut(i, g).copy_from_slice(&b);

        let mut subject = SubjectData {
            id: (i + 1).to_string(),
            records: vec![],
            event_time: 1.0,
            event: false,
            covariates,
        };
        let sd = class.sigma2.sqrt();
        let mut records = Vec::with_capacity(config.visit_times.len());
        for &nominal in &config.visit_times {
            let jitter = if config.visit_jitter > 0.0 {
                rng.random_range(-config.visit_jitter..config.visit_jitter)
            } else {
                0.0
            };
            let time = (nominal + jitter).max(0.0);
            let mu = current_value(&subject, class, &b, time, spec)?;
            records.push(LongitudinalRecord {
                time,
                value: mu + sd * std_normal.sample(&mut rng),
            });
        }

        let t_star = sample_event_time(&subject, class, &b, spec, &rule, &mut rng, config.t_max)?;
        let c = censor.sample(&mut rng);
        let (t, event) = if t_star <= c { (t_star, true) } else { (c, false) };
        // A zero time cannot enter the likelihood.
        let t = t.max(f64::MIN_POSITIVE);
        records.retain(|r| r.time <= t);
        records.sort_by(|a, b| a.time.total_cmp(&b.time));
        subject.records = records;
        subject.event_time = t;
        subject.event = event;
        subjects.push(subject);
        labels.push(label);
    }
    Ok(SimulatedDataset {
        subjects,
        true_labels: labels,
        true_random_effects: latent,
    })
}
