//! Truncated harmonic mean weights for choosing among chains.
//!
//! For draws `x_1..x_T` with unnormalized posterior density `q`, let `H` be
//! the draws whose `q` lies in the upper `beta` fraction and
//! `h(x) = #{x_j in H : d(x_j, x) < eps} / (beta T)`. The weight is
//! `[ (1/T) sum_i h(x_i) / q(x_i) ]^-1`, the marginal likelihood divided by
//! the volume of an `eps` ball. Distances are Euclidean after dividing each
//! coordinate by a scale shared by all chains.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, quantile_sorted};

pub const DEFAULT_BETA: f64 = 0.6;
/// Draws used for the default radius.
pub const EPSILON_SUBSAMPLE: usize = 1000;
/// Quantile of pairwise distances giving the default radius.
pub const EPSILON_QUANTILE: f64 = 0.01;
pub const MIN_DRAWS: usize = 100;

/// Draws of one chain prepared for the estimator.
#[derive(Debug, Clone)]
pub struct WeightInput {
    /// Points on the constrained scale.
    pub points: Vec<Vec<f64>>,
    /// `log q` at each point: log likelihood plus log prior, no Jacobian.
    pub log_q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainWeightReport {
    /// `None` for failed chains.
    pub log_weights: Vec<Option<f64>>,
    pub selected_chain: usize,
    pub beta: f64,
    pub epsilon: f64,
}

fn scaled_distance(a: &[f64], b: &[f64], inv_scale: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(inv_scale)
        .map(|((x, y), s)| {
            let d = (x - y) * s;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Per-coordinate standard deviation over all draws of all chains; zero
/// spreads are replaced by one.
pub fn pooled_scale(chains: &[&WeightInput]) -> Vec<f64> {
    let dim = chains
        .iter()
        .find_map(|c| c.points.first().map(|p| p.len()))
        .unwrap_or(0);
    let mut n = 0.0;
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    for c in chains {
        for p in &c.points {
            n += 1.0;
            for k in 0..dim {
                let d = p[k] - mean[k];
                mean[k] += d / n;
                m2[k] += d * (p[k] - mean[k]);
            }
        }
    }
    m2.into_iter()
        .map(|s| {
            let sd = (s / (n - 1.0).max(1.0)).sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        })
        .collect()
}

/// Default radius: the 1% quantile of pairwise scaled distances among at most
/// 1000 evenly spaced draws.
pub fn default_epsilon(input: &WeightInput, scale: &[f64]) -> Result<f64> {
    let t = input.points.len();
    if t < 2 {
        return Err(Error::Estimator("need at least two draws for a radius".into()));
    }
    let inv: Vec<f64> = scale.iter().map(|s| 1.0 / s).collect();
    let m = t.min(EPSILON_SUBSAMPLE);
    let idx: Vec<usize> = (0..m).map(|k| k * t / m).collect();
    let mut d = Vec::with_capacity(m * (m - 1) / 2);
    for a in 0..m {
        for b in a + 1..m {
            d.push(scaled_distance(&input.points[idx[a]], &input.points[idx[b]], &inv));
        }
    }
    d.sort_by(f64::total_cmp);
    let eps = quantile_sorted(&d, EPSILON_QUANTILE);
    if eps > 0.0 {
        Ok(eps)
    } else {
        // Many repeated draws; fall back to the smallest positive distance.
        d.into_iter()
            .find(|x| *x > 0.0)
            .ok_or_else(|| Error::Estimator("all draws are identical".into()))
    }
}

/// Log truncated harmonic mean weight of one chain.
pub fn chain_log_weight(input: &WeightInput, beta: f64, epsilon: f64, scale: &[f64]) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Config(format!("beta must lie in (0, 1), got {beta}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let t = input.points.len();
    if t < MIN_DRAWS {
        return Err(Error::Estimator(format!(
            "chain has {t} draws; at least {MIN_DRAWS} are needed"
        )));
    }
    if input.log_q.len() != t {
        return Err(Error::Dimension("log_q and points differ in length".into()));
    }
    let inv: Vec<f64> = scale.iter().map(|s| 1.0 / s).collect();
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| input.log_q[b].total_cmp(&input.log_q[a]).then(a.cmp(&b)));
    let n_top = ((beta * t as f64).ceil() as usize).clamp(1, t);
    let top = &order[..n_top];
    let beta_t = beta * t as f64;

    let mut terms = Vec::with_capacity(t);
    for i in 0..t {
        let count = top
            .iter()
            .filter(|&&j| scaled_distance(&input.points[j], &input.points[i], &inv) < epsilon)
            .count();
        if count > 0 {
            terms.push((count as f64 / beta_t).ln() - input.log_q[i]);
        }
    }
    if terms.is_empty() {
        return Err(Error::Estimator(format!(
            "no draw lies within epsilon = {epsilon} of the high-density set; increase epsilon"
        )));
    }
    Ok((t as f64).ln() - log_sum_exp(&terms))
}

/// Log volume of the scaled `epsilon` ball, the factor dropped from the
/// weights: `log(pi^(d/2) / Gamma(d/2 + 1)) + d log(eps) + sum log(scale)`.
pub fn log_ball_volume(epsilon: f64, scale: &[f64]) -> f64 {
    let d = scale.len() as f64;
    0.5 * d * PI.ln() - ln_gamma(0.5 * d + 1.0)
        + d * epsilon.ln()
        + scale.iter().map(|s| s.ln()).sum::<f64>()
}

/// Weight every usable chain and select the largest. `inputs[k]` is `None`
/// for failed chains. With `epsilon = None` the largest per-chain default is
/// shared by all chains.
pub fn select_chain(
    inputs: &[Option<WeightInput>],
    beta: f64,
    epsilon: Option<f64>,
) -> Result<ChainWeightReport> {
    let usable: Vec<&WeightInput> = inputs.iter().flatten().collect();
    if usable.is_empty() {
        return Err(Error::AllChainsFailed("nothing to select".into()));
    }
    let scale = pooled_scale(&usable);
    let epsilon = match epsilon {
        Some(e) => e,
        None => {
            let mut e = 0.0f64;
            for c in &usable {
                e = e.max(default_epsilon(c, &scale)?);
            }
            e
        }
    };
    let mut log_weights = Vec::with_capacity(inputs.len());
    for input in inputs {
        log_weights.push(match input {
            Some(c) => Some(chain_log_weight(c, beta, epsilon, &scale)?),
            None => None,
        });
    }
    let mut selected = None;
    for (k, w) in log_weights.iter().enumerate() {
        if let Some(w) = w {
            match selected {
                Some((_, best)) if *w <= best => {}
                _ => selected = Some((k, *w)),
            }
        }
    }
    Ok(ChainWeightReport {
        log_weights,
        selected_chain: selected.expect("at least one usable chain").0,
        beta,
        epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Prior N(0,1), one observation y = 0.5 with unit noise; exact posterior
    /// N(0.25, 0.5).
    fn conjugate_chain(t: usize, seed: u64) -> WeightInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let post = Normal::new(0.25, 0.5f64.sqrt()).unwrap();
        let points: Vec<Vec<f64>> = (0..t).map(|_| vec![post.sample(&mut rng)]).collect();
        let log_q = points
            .iter()
            .map(|p| {
                let x = p[0];
                let ln2pi = (2.0 * PI).ln();
                (-0.5 * ln2pi - 0.5 * x * x) + (-0.5 * ln2pi - 0.5 * (0.5 - x) * (0.5 - x))
            })
            .collect();
        WeightInput { points, log_q }
    }

    fn log_ml_estimate(input: &WeightInput, beta: f64) -> f64 {
        let scale = pooled_scale(&[input]);
        let eps = default_epsilon(input, &scale).unwrap();
        chain_log_weight(input, beta, eps, &scale).unwrap() + log_ball_volume(eps, &scale)
    }

    fn exact_log_ml() -> f64 {
        -0.5 * (2.0 * PI * 2.0).ln() - 0.25 / 4.0
    }

    #[test]
    fn conjugate_marginal_likelihood() {
        assert!((exact_log_ml() - (-1.32801)).abs() < 1e-5);
        let input = conjugate_chain(5000, 1);
        let est = log_ml_estimate(&input, 0.6);
        assert!((est - exact_log_ml()).abs() < 0.3, "{est}");
        let half = log_ml_estimate(&input, 0.3);
        assert!((est - half).abs() < 0.3);
    }

    #[test]
    fn error_shrinks_with_more_draws() {
        let mut small = 0.0;
        let mut large = 0.0;
        for seed in 0..5 {
            small += (log_ml_estimate(&conjugate_chain(2000, seed), 0.6) - exact_log_ml()).abs();
            large += (log_ml_estimate(&conjugate_chain(20000, 100 + seed), 0.6) - exact_log_ml()).abs();
        }
        assert!(large < small, "{large} vs {small}");
    }

    #[test]
    fn identical_chains_tie_to_lowest_index() {
        let c = conjugate_chain(500, 3);
        let report = select_chain(&[Some(c.clone()), Some(c)], 0.6, None).unwrap();
        assert_eq!(report.log_weights[0], report.log_weights[1]);
        assert_eq!(report.selected_chain, 0);
    }

    #[test]
    fn single_chain_selected() {
        let report = select_chain(&[Some(conjugate_chain(300, 4))], 0.6, None).unwrap();
        assert_eq!(report.selected_chain, 0);
    }

    #[test]
    fn low_density_copy_loses() {
        let good = conjugate_chain(1000, 5);
        let bad = WeightInput {
            points: good.points.iter().map(|p| vec![p[0] + 8.0]).collect(),
            log_q: good.log_q.iter().map(|q| q - 50.0).collect(),
        };
        let report = select_chain(&[Some(bad), None, Some(good)], 0.6, None).unwrap();
        assert_eq!(report.selected_chain, 2);
        assert_eq!(report.log_weights[1], None);
    }

    #[test]
    fn failures_and_bad_arguments() {
        assert!(select_chain(&[None, None], 0.6, None).is_err());
        let c = conjugate_chain(200, 6);
        let scale = vec![1.0];
        assert!(chain_log_weight(&c, 1.0, 0.1, &scale).is_err());
        assert!(chain_log_weight(&c, 0.6, 0.0, &scale).is_err());
        let short = conjugate_chain(50, 7);
        assert!(chain_log_weight(&short, 0.6, 0.1, &scale).is_err());
    }
}
