//! Gradient of the unconstrained log posterior and a finite-difference check.
//!
//! The analytic derivatives live in [`JointModel`]; this module gives them a
//! data-in, vector-out interface and supplies the central-difference oracle.
//! `theta` here is the vector of [`crate::model::untransform`].

use crate::error::{Error, Result};
use crate::model::{JointModel, ModelSpec, PriorSpec, SubjectData};

#[derive(Debug, Clone, PartialEq)]
pub struct GradientResult {
    pub value: f64,
    pub gradient: Vec<f64>,
}

pub fn grad_log_posterior(
    theta: &[f64],
    data: &[SubjectData],
    spec: &ModelSpec,
    priors: &PriorSpec,
) -> Result<GradientResult> {
    let model = JointModel::new(spec, priors, data)?;
    model_gradient(&model, theta)
}

pub fn model_gradient(model: &JointModel, theta: &[f64]) -> Result<GradientResult> {
    let mut gradient = vec![0.0; theta.len()];
    let value = model.evaluate_raw(theta, Some(&mut gradient))?;
    Ok(GradientResult { value, gradient })
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` of any scalar
/// function.
pub fn central_differences<F>(f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("step must be positive, got {h}")));
    }
    let mut x = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        x[i] = theta[i] + h;
        let up = f(&x)?;
        x[i] = theta[i] - h;
        let down = f(&x)?;
        x[i] = theta[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

pub fn finite_difference_gradient(
    theta: &[f64],
    data: &[SubjectData],
    spec: &ModelSpec,
    priors: &PriorSpec,
    h: f64,
) -> Result<Vec<f64>> {
    let model = JointModel::new(spec, priors, data)?;
    central_differences(|x| model.evaluate_raw(x, None), theta, h)
}

/// `max_i |g_i - fd_i| / max(1, |g_i|)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(g, f)| (g - f).abs() / g.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Worst [`max_relative_error`] between the sampler-facing gradient of
/// [`JointModel::evaluate`] and central differences with step `h`, over
/// `n_points` points drawn uniformly from `[-0.6, 0.6]` in every sampler
/// coordinate. Far wider points push the log density to ~1e8, where central
/// differences lose all precision to round-off.
pub fn check_gradient<R: rand::Rng + ?Sized>(
    model: &JointModel,
    n_points: usize,
    h: f64,
    rng: &mut R,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..n_points {
        let theta: Vec<f64> = (0..model.layout().dim())
            .map(|_| rng.random_range(-0.6..0.6))
            .collect();
        let mut analytic = vec![0.0; theta.len()];
        model.evaluate(&theta, Some(&mut analytic))?;
        let numeric = central_differences(|x| model.evaluate(x, None), &theta, h)?;
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{log_sum_exp, softmax_in_place};
    use crate::model::{BasisTerm, Layout, LongitudinalRecord, Prior};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn toy_data(n: usize, seed: u64) -> Vec<SubjectData> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let t: f64 = rng.random_range(0.5..6.0);
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

    fn toy_spec(g: usize) -> ModelSpec {
        ModelSpec {
            n_classes: g,
            fixed_basis: vec![
                BasisTerm::Intercept,
                BasisTerm::TimePower(1),
                BasisTerm::Covariate("male".into()),
                BasisTerm::TimePower(2),
            ],
            random_basis: vec![
                BasisTerm::Intercept,
                BasisTerm::TimeCovariateInteraction(1, "male".into()),
            ],
            survival_covariates: vec!["age".into()],
            membership_covariates: vec!["male".into(), "age".into()],
            quadrature_order: 15,
        }
    }

    fn random_theta(model: &JointModel, rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
        (0..model.layout().dim())
            .map(|_| rng.random_range(-scale..scale))
            .collect()
    }

    #[test]
    fn standard_normal_coordinate() {
        let spec = toy_spec(1);
        let priors = PriorSpec {
            beta: Prior::Normal { mean: 0.0, sd: 1.0 },
            ..PriorSpec::simulation_default(1)
        };
        let layout = Layout::new(&spec, 0);
        let mut theta = vec![0.0; layout.dim()];
        theta[0] = 1.0;
        let g = grad_log_posterior(&theta, &[], &spec, &priors).unwrap();
        assert!((g.gradient[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn gamma_prior_on_log_variance() {
        let spec = toy_spec(1);
        let priors = PriorSpec {
            sigma2: Prior::Gamma {
                shape: 1.5,
                rate: 1.5,
            },
            ..PriorSpec::simulation_default(1)
        };
        let layout = Layout::new(&spec, 0);
        let theta = vec![0.0; layout.dim()];
        let g = grad_log_posterior(&theta, &[], &spec, &priors).unwrap();
        assert!(g.gradient[layout.log_sigma2_offset()].abs() < 1e-15);
    }

    #[test]
    fn central_differences_on_simple_functions() {
        let x = [0.3, -1.2, 2.0];
        let quad = central_differences(|t| Ok(-0.5 * t.iter().map(|v| v * v).sum::<f64>()), &x, 1e-5)
            .unwrap();
        for (q, v) in quad.iter().zip(&x) {
            assert!((q + v).abs() < 1e-9);
        }
        let lin = central_differences(|t| Ok(2.0 * t[0] - 3.0 * t[1] + 0.5 * t[2]), &x, 0.5).unwrap();
        assert!((lin[0] - 2.0).abs() < 1e-14);
        assert!((lin[1] + 3.0).abs() < 1e-14);
        assert!((lin[2] - 0.5).abs() < 1e-14);
        assert!(central_differences(|_| Ok(0.0), &x, 0.0).is_err());
    }

    #[test]
    fn value_matches_log_posterior() {
        let data = toy_data(8, 2);
        let spec = toy_spec(2);
        let priors = PriorSpec::simulation_default(2);
        let model = JointModel::new(&spec, &priors, &data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta = random_theta(&model, &mut rng, 0.5);
        let g = model_gradient(&model, &theta).unwrap();
        let slow = crate::model::log_posterior_unconstrained(&theta, &data, &spec, &priors).unwrap();
        assert!(((g.value - slow) / slow).abs() < 1e-12);
    }

    #[test]
    fn matches_finite_differences_at_random_points() {
        let data = toy_data(10, 7);
        for g in [1usize, 2, 3] {
            let spec = toy_spec(g);
            let priors = PriorSpec::simulation_default(g);
            let model = JointModel::new(&spec, &priors, &data).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11 + g as u64);
            let reps = if g == 2 { 100 } else { 10 };
            for _ in 0..reps {
                let theta = random_theta(&model, &mut rng, 0.6);
                let analytic = model_gradient(&model, &theta).unwrap().gradient;
                let numeric = central_differences(|x| model.evaluate_raw(x, None), &theta, 1e-5).unwrap();
                let err = max_relative_error(&analytic, &numeric);
                assert!(err < 1e-5, "G={g}: max relative error {err}");
            }
        }
    }

    #[test]
    fn check_at_random_points() {
        let data = toy_data(6, 3);
        let spec = toy_spec(2);
        let model = JointModel::new(&spec, &PriorSpec::simulation_default(2), &data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let err = check_gradient(&model, 3, 1e-5, &mut rng).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn directional_derivatives() {
        let data = toy_data(10, 8);
        let spec = toy_spec(2);
        let priors = PriorSpec::simulation_default(2);
        let model = JointModel::new(&spec, &priors, &data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let theta = random_theta(&model, &mut rng, 0.6);
        // Sampler coordinates, centred intercepts.
        let mut g = vec![0.0; theta.len()];
        model.evaluate(&theta, Some(&mut g)).unwrap();
        let eps = 1e-5;
        for _ in 0..50 {
            let mut v: Vec<f64> = (0..theta.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            let at = |s: f64| {
                let x: Vec<f64> = theta.iter().zip(&v).map(|(a, b)| a + s * b).collect();
                model.log_posterior(&x).unwrap()
            };
            let fd = (at(eps) - at(-eps)) / (2.0 * eps);
            let exact: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
            assert!((fd - exact).abs() / exact.abs().max(1.0) < 1e-5);
        }
    }

    #[test]
    fn mixture_gradient_is_weighted_average() {
        // f(x) = log(p exp(l1(x)) + (1 - p) exp(l2(x))) with quadratic l_g.
        let p = 0.3f64;
        let l1 = |x: f64| -0.5 * (x - 1.0) * (x - 1.0);
        let l2 = |x: f64| -2.0 * (x + 0.5) * (x + 0.5);
        let d1 = |x: f64| -(x - 1.0);
        let d2 = |x: f64| -4.0 * (x + 0.5);
        let f = |x: f64| log_sum_exp(&[p.ln() + l1(x), (1.0 - p).ln() + l2(x)]);
        for &x in &[-1.0, 0.0, 0.4, 2.0] {
            let mut w = [p.ln() + l1(x), (1.0 - p).ln() + l2(x)];
            softmax_in_place(&mut w);
            let weighted = w[0] * d1(x) + w[1] * d2(x);
            let h = 1e-6;
            let fd = (f(x + h) - f(x - h)) / (2.0 * h);
            assert!((weighted - fd).abs() < 1e-8);
        }
    }
}
