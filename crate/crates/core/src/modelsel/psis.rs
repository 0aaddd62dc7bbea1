//! Pareto-smoothed importance sampling leave-one-out cross-validation.
//!
//! For each subject the importance ratios `1 / p(D_i | theta_s)` have their
//! largest `M = min(ceil(0.2 S), ceil(3 sqrt(S)))` values replaced by
//! expected order statistics of a generalized Pareto fitted to the tail.

use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::modelsel::{sum_se, CriterionResult, PointwiseLogLik};

/// Shape estimates above this make the subject's estimate unreliable.
pub const KHAT_WARNING: f64 = 0.7;
/// Draw count below which the smoothing is poorly determined.
pub const RECOMMENDED_DRAWS: usize = 100;
const MIN_TAIL: usize = 5;

/// Generalized Pareto fit (shape `k`, scale `sigma`) of positive exceedances
/// by the profile-likelihood grid method with a weak prior on the shape.
/// The shape is shrunk towards 0.5 as `(n k + 5) / (n + 10)`.
pub fn gpd_fit(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let mut x = x.to_vec();
    x.sort_by(f64::total_cmp);
    let prior = 3.0;
    let m = 30 + (n as f64).sqrt().floor() as usize;
    let x_star = x[((n as f64) / 4.0 + 0.5).floor() as usize - 1];
    let x_max = x[n - 1];
    let theta: Vec<f64> = (1..=m)
        .map(|j| 1.0 / x_max + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / prior / x_star)
        .collect();
    let profile: Vec<f64> = theta
        .iter()
        .map(|&t| {
            let k = x.iter().map(|v| (-t * v).ln_1p()).sum::<f64>() / n as f64;
            n as f64 * ((-t / k).ln() - k - 1.0)
        })
        .collect();
    let lse = log_sum_exp(&profile);
    let theta_hat: f64 = theta
        .iter()
        .zip(&profile)
        .map(|(t, l)| t * (l - lse).exp())
        .filter(|v| v.is_finite())
        .sum();
    let k = x.iter().map(|v| (-theta_hat * v).ln_1p()).sum::<f64>() / n as f64;
    let sigma = -k / theta_hat;
    let k = (k * n as f64 + 0.5 * 10.0) / (n as f64 + 10.0);
    (if k.is_nan() { f64::INFINITY } else { k }, sigma)
}

/// Quantile of the generalized Pareto distribution.
fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-12 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * (-k * (-p).ln_1p()).exp_m1() / k
    }
}

/// Smoothed log weights, normalized so the largest raw weight is 1, and the
/// shape estimate. All-equal ratios give `k = -inf` and uniform weights.
pub fn psis_smooth(log_ratios: &[f64]) -> (Vec<f64>, f64) {
    let s = log_ratios.len();
    let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = log_ratios.iter().map(|r| r - max).collect();
    if lw.iter().all(|v| *v == 0.0) {
        return (lw, f64::NEG_INFINITY);
    }
    let tail_len = ((0.2 * s as f64).ceil() as usize).min((3.0 * (s as f64).sqrt()).ceil() as usize);
    if tail_len < MIN_TAIL || tail_len >= s {
        return (lw, f64::INFINITY);
    }
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
    let tail = &order[s - tail_len..];
    let cutoff = lw[order[s - tail_len - 1]];
    let exp_cutoff = cutoff.exp();
    let excess: Vec<f64> = tail.iter().map(|&j| lw[j].exp() - exp_cutoff).collect();
    let k = if excess.iter().all(|e| *e <= 0.0) {
        // Tail is flat at the cutoff; nothing to smooth.
        f64::NEG_INFINITY
    } else {
        let (k, sigma) = gpd_fit(&excess);
        if k.is_finite() && sigma > 0.0 {
            for (rank, &j) in tail.iter().enumerate() {
                let p = (rank as f64 + 0.5) / tail_len as f64;
                lw[j] = (gpd_quantile(p, k, sigma) + exp_cutoff).ln();
            }
        }
        k
    };
    for v in &mut lw {
        if *v > 0.0 {
            *v = 0.0;
        }
    }
    (lw, k)
}

/// PSIS-LOO on the deviance scale. `pareto_khat` is always present.
pub fn psis_loo(pll: &PointwiseLogLik) -> Result<CriterionResult> {
    let s = pll.n_draws();
    if s < 2 {
        return Err(Error::Estimator(format!("PSIS-LOO needs at least 2 draws, got {s}")));
    }
    if s < RECOMMENDED_DRAWS {
        eprintln!("warning: PSIS-LOO with only {s} draws; at least {RECOMMENDED_DRAWS} are recommended");
    }
    let n = pll.n_subjects();
    let log_s = (s as f64).ln();
    let mut pointwise = Vec::with_capacity(n);
    let mut khat = Vec::with_capacity(n);
    let mut lppd_total = 0.0;
    for i in 0..n {
        let col = pll.subject(i);
        let ratios: Vec<f64> = col.iter().map(|v| -v).collect();
        let (lw, k) = psis_smooth(&ratios);
        let num: Vec<f64> = lw.iter().zip(&col).map(|(w, v)| w + v).collect();
        let elpd = log_sum_exp(&num) - log_sum_exp(&lw);
        lppd_total += log_sum_exp(&col) - log_s;
        pointwise.push(-2.0 * elpd);
        khat.push(k);
    }
    let bad = khat.iter().filter(|k| **k > KHAT_WARNING).count();
    if bad > 0 {
        eprintln!("warning: {bad} of {n} subjects have Pareto k > {KHAT_WARNING}");
    }
    let estimate: f64 = pointwise.iter().sum();
    Ok(CriterionResult {
        estimate,
        se: sum_se(&pointwise),
        p_eff: lppd_total + 0.5 * estimate,
        pointwise,
        pareto_khat: Some(khat),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelsel::waic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identical_rows_match_waic() {
        let row = vec![-1.2, -0.4, -3.0];
        let pll = PointwiseLogLik::new(vec![row.clone(); 200]).unwrap();
        let loo = psis_loo(&pll).unwrap();
        let w = waic(&pll).unwrap();
        assert!((loo.estimate - w.estimate).abs() < 1e-12);
        let lppd: f64 = row.iter().sum();
        assert!((loo.estimate + 2.0 * lppd).abs() < 1e-12);
        assert!(loo.pareto_khat.unwrap().iter().all(|k| *k == f64::NEG_INFINITY));
    }

    #[test]
    fn gpd_fit_recovers_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, sigma) in &[(0.5, 1.0), (0.2, 2.0)] {
            let x: Vec<f64> = (0..20000)
                .map(|_| gpd_quantile(rand::Rng::random::<f64>(&mut rng), k, sigma))
                .collect();
            let (kh, sh) = gpd_fit(&x);
            assert!((kh - k).abs() < 0.05, "{kh}");
            assert!((sh / sigma - 1.0).abs() < 0.1, "{sh}");
        }
    }

    fn mean_khat(sd: f64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sd).unwrap();
        let reps = 50;
        (0..reps)
            .map(|_| {
                let r: Vec<f64> = (0..1000).map(|_| normal.sample(&mut rng)).collect();
                psis_smooth(&r).1
            })
            .sum::<f64>()
            / reps as f64
    }

    #[test]
    fn khat_grows_with_tail_weight() {
        assert!(mean_khat(2.0, 1) > mean_khat(0.5, 2));
    }

    #[test]
    fn smoothed_weights_are_capped() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(0.0, 1.5).unwrap();
        let r: Vec<f64> = (0..400).map(|_| normal.sample(&mut rng)).collect();
        let (lw, k) = psis_smooth(&r);
        assert!(k.is_finite());
        assert!(lw.iter().all(|w| *w <= 0.0));
        // Ordering of the draws is preserved.
        let mut idx: Vec<usize> = (0..r.len()).collect();
        idx.sort_by(|&a, &b| r[a].total_cmp(&r[b]));
        for w in idx.windows(2) {
            assert!(lw[w[0]] <= lw[w[1]] + 1e-12);
        }
    }

    #[test]
    fn loo_not_above_lppd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..5 {
            let rows: Vec<Vec<f64>> = (0..300)
                .map(|_| (0..8).map(|i| -1.0 - 0.1 * i as f64 + 0.4 * normal.sample(&mut rng)).collect())
                .collect();
            let pll = PointwiseLogLik::new(rows).unwrap();
            let loo = psis_loo(&pll).unwrap();
            for i in 0..pll.n_subjects() {
                let col = pll.subject(i);
                let lppd = log_sum_exp(&col) - (col.len() as f64).ln();
                assert!(-0.5 * loo.pointwise[i] <= lppd + 1e-12);
            }
        }
    }

    #[test]
    fn draw_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..250)
            .map(|_| (0..4).map(|_| -2.0 + normal.sample(&mut rng)).collect())
            .collect();
        let a = psis_loo(&PointwiseLogLik::new(rows.clone()).unwrap()).unwrap();
        let reversed: Vec<Vec<f64>> = rows.into_iter().rev().collect();
        let b = psis_loo(&PointwiseLogLik::new(reversed).unwrap()).unwrap();
        assert!((a.estimate - b.estimate).abs() < 1e-9);
    }
}
