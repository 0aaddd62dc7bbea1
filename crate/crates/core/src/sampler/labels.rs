//! Class labels drawn from their full conditional at each kept draw.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::model::JointModel;
use crate::sampler::chain::{rng_for, stream, ChainDraws};

/// Labels in `1..=n_classes`, one row per kept draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDraws {
    pub n_classes: usize,
    pub labels: Vec<Vec<u32>>,
}

/// Draw one index from normalized log weights.
pub fn draw_categorical<R: Rng + ?Sized>(log_w: &[f64], rng: &mut R) -> Option<usize> {
    let lse = log_sum_exp(log_w);
    if !lse.is_finite() {
        return None;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (g, lw) in log_w.iter().enumerate() {
        let p = (lw - lse).exp();
        if p > 0.0 {
            last = g;
        }
        acc += p;
        if u < acc {
            return Some(g);
        }
    }
    Some(last)
}

pub fn sample_class_labels(chain: &ChainDraws, model: &JointModel, seed: u64) -> Result<ClassDraws> {
    if chain.draws.is_empty() {
        return Err(Error::Sampler(format!("chain {} has no draws", chain.chain_id)));
    }
    let mut rng = rng_for(seed, stream::LABELS, chain.chain_id as u64);
    let n_classes = model.spec().n_classes;
    let mut labels = Vec::with_capacity(chain.draws.len());
    for (j, theta) in chain.draws.iter().enumerate() {
        let mut row = Vec::with_capacity(model.n_subjects());
        for i in 0..model.n_subjects() {
            let w = model.class_log_terms(theta, i)?;
            let g = draw_categorical(&w, &mut rng).ok_or_else(|| {
                Error::Sampler(format!(
                    "all class weights are zero for subject {} at draw {j}",
                    model.subject_ids()[i]
                ))
            })?;
            row.push(g as u32 + 1);
        }
        labels.push(row);
    }
    Ok(ClassDraws { n_classes, labels })
}

/// Empirical membership frequencies, subjects by classes.
pub fn posterior_class_probs(draws: &ClassDraws) -> Vec<Vec<f64>> {
    let n = draws.labels.first().map_or(0, |r| r.len());
    let t = draws.labels.len() as f64;
    let mut probs = vec![vec![0.0; draws.n_classes]; n];
    for row in &draws.labels {
        for (i, &g) in row.iter().enumerate() {
            probs[i][g as usize - 1] += 1.0;
        }
    }
    for row in &mut probs {
        row.iter_mut().for_each(|p| *p /= t);
    }
    probs
}

/// Most probable class per subject, 1-based, lowest index on ties.
pub fn map_labels(probs: &[Vec<f64>]) -> Vec<u32> {
    probs
        .iter()
        .map(|row| {
            let mut best = 0;
            for (g, p) in row.iter().enumerate() {
                if *p > row[best] {
                    best = g;
                }
            }
            best as u32 + 1
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let hits = (0..n)
            .filter(|_| draw_categorical(&[-1.0, -2.0], &mut rng) == Some(0))
            .count();
        let p = hits as f64 / n as f64;
        assert!((p - 0.7310585786300049).abs() < 4.0 * (0.73 * 0.27 / n as f64).sqrt());
    }

    #[test]
    fn degenerate_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let big = 1e10f64.ln();
        for _ in 0..10_000 {
            assert_eq!(draw_categorical(&[0.0, big, 0.0], &mut rng), Some(1));
        }
        assert_eq!(draw_categorical(&[f64::NEG_INFINITY; 2], &mut rng), None);
    }

    #[test]
    fn counting_and_map() {
        let d = ClassDraws {
            n_classes: 2,
            labels: vec![vec![1, 2], vec![1, 2], vec![2, 2], vec![1, 2]],
        };
        let p = posterior_class_probs(&d);
        assert_eq!(p[0], vec![0.75, 0.25]);
        assert_eq!(p[1], vec![0.0, 1.0]);
        assert_eq!(map_labels(&p), vec![1, 2]);
        assert_eq!(map_labels(&[vec![0.5, 0.5]]), vec![1]);
        for row in p {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
