//! Split R-hat and effective sample size.
//!
//! Chains are split in halves (the middle draw of an odd-length chain is
//! dropped). The rank-normalized forms replace the pooled draws by normal
//! scores of their average ranks. A chain of constant draws makes both
//! quantities undefined; they are returned as NaN.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::math::{mean, sample_variance};

fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let n = c.len();
        let half = n / 2;
        out.push(c[..half].to_vec());
        out.push(c[n - half..].to_vec());
    }
    out
}

fn usable(chains: &[Vec<f64>]) -> bool {
    !chains.is_empty() && chains.iter().all(|c| c.len() >= 4 && c.len() == chains[0].len())
}

/// Normal scores of average ranks, `Phi^-1((r - 3/8) / (S + 1/4))`.
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut all: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, xs)| xs.iter().enumerate().map(move |(j, x)| (*x, c, j)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = all.len() as f64;
    let std = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let rank = 0.5 * ((i + 1) + (j + 1)) as f64;
        let z = std.inverse_cdf((rank - 0.375) / (s + 0.25));
        for item in &all[i..=j] {
            out[item.1][item.2] = z;
        }
        i = j + 1;
    }
    out
}

fn rhat_basic(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| sample_variance(c)).collect::<Vec<_>>());
    if !(w > 0.0) {
        return f64::NAN;
    }
    let b_over_n = if chains.len() > 1 { sample_variance(&means) } else { 0.0 };
    ((w * (n - 1.0) / n + b_over_n) / w).sqrt()
}

fn any_constant(chains: &[Vec<f64>]) -> bool {
    chains.iter().any(|c| c.iter().all(|x| *x == c[0]))
}

/// Rank-normalized split R-hat. NaN for fewer than four draws per chain,
/// unequal lengths, or a constant chain.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    if !usable(chains) || any_constant(chains) {
        return f64::NAN;
    }
    rhat_basic(&rank_normalize(&split(chains)))
}

/// Split R-hat on the raw draws.
pub fn split_rhat_classic(chains: &[Vec<f64>]) -> f64 {
    if !usable(chains) || any_constant(chains) {
        return f64::NAN;
    }
    rhat_basic(&split(chains))
}

/// Biased autocovariance at `lag`.
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// ESS of already split chains by Geyer's initial monotone sequence.
fn ess_of(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov_mean = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| autocov(c, *mu, lag))
            .sum::<f64>()
            / m as f64
    };
    let nf = n as f64;
    let mean_var = acov_mean(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_variance(&means);
    }
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho = |lag: usize| 1.0 - (mean_var - acov_mean(lag)) / var_plus;
    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut t = 0;
    while t + 5 < n && even + odd > 0.0 {
        t += 2;
        even = rho(t);
        odd = rho(t + 1);
        if even + odd >= 0.0 {
            rho_hat[t] = even;
            rho_hat[t + 1] = odd;
        }
    }
    let max_t = t;
    if even > 0.0 {
        rho_hat[max_t] = even;
    }
    let mut t = 0;
    while t + 4 <= max_t {
        t += 2;
        if rho_hat[t] + rho_hat[t + 1] > rho_hat[t - 2] + rho_hat[t - 1] {
            rho_hat[t] = 0.5 * (rho_hat[t - 2] + rho_hat[t - 1]);
            rho_hat[t + 1] = rho_hat[t];
        }
    }
    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho_hat[..max_t].iter().sum::<f64>() + rho_hat[max_t];
    total / tau.max(1.0 / total.log10())
}

/// Rank-normalized (bulk) effective sample size over all chains.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    if !usable(chains) || any_constant(chains) {
        return f64::NAN;
    }
    ess_of(&rank_normalize(&split(chains)))
}

/// Effective sample size of the mean: split chains, no rank normalization.
pub fn ess_mean(chains: &[Vec<f64>]) -> f64 {
    if !usable(chains) || any_constant(chains) {
        return f64::NAN;
    }
    ess_of(&split(chains))
}

/// Monte Carlo standard error of the pooled mean.
pub fn mcse_mean(chains: &[Vec<f64>]) -> f64 {
    let all: Vec<f64> = chains.iter().flatten().copied().collect();
    (crate::math::sample_variance(&all) / ess_mean(chains)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid(m: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    fn ar1(rho: f64, m: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let innov = (1.0 - rho * rho).sqrt();
        (0..m)
            .map(|_| {
                let mut x: f64 = StandardNormal.sample(&mut rng);
                (0..n)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        x = rho * x + innov * e;
                        x
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn iid_chains() {
        let chains = iid(4, 1000, 1);
        let r = split_rhat(&chains);
        assert!((0.999..=1.01).contains(&r), "{r}");
        let e = ess(&chains);
        assert!((e / 4000.0 - 1.0).abs() < 0.15, "{e}");
    }

    #[test]
    fn offset_chains() {
        let mut chains = iid(2, 1000, 2);
        chains[1].iter_mut().for_each(|x| *x += 10.0);
        assert!(split_rhat_classic(&chains) > 2.0);
        // Rank normalization bounds the between-chain spread.
        assert!(split_rhat(&chains) > 1.5);
    }

    #[test]
    fn ar1_ess() {
        let rho = 0.9;
        let chains = ar1(rho, 4, 5000, 3);
        let per_draw = ess(&chains) / 20000.0;
        let theory = (1.0 - rho) / (1.0 + rho);
        assert!((per_draw / theory - 1.0).abs() < 0.25, "{per_draw}");
        let raw = ess_mean(&chains) / 20000.0;
        assert!((raw / theory - 1.0).abs() < 0.25, "{raw}");
    }

    #[test]
    fn mcse_of_iid_mean() {
        let chains = iid(4, 1000, 5);
        let m = mcse_mean(&chains);
        assert!((m * 4000f64.sqrt() - 1.0).abs() < 0.1, "{m}");
    }

    #[test]
    fn single_chain_uses_halves() {
        let chains = iid(1, 500, 4);
        let r = split_rhat(&chains);
        assert!(r.is_finite() && r < 1.05);
        let mut drift = chains.clone();
        drift[0].iter_mut().enumerate().for_each(|(i, x)| *x += i as f64 / 50.0);
        assert!(split_rhat(&drift) > 1.5);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(split_rhat(&[vec![1.0; 100], vec![2.0; 100]]).is_nan());
        assert!(ess(&[vec![3.0; 50]]).is_nan());
        assert!(split_rhat(&[vec![1.0, 2.0, 3.0]]).is_nan());
        assert!(split_rhat(&[]).is_nan());
    }

    #[test]
    fn rank_normalize_ties() {
        let z = rank_normalize(&[vec![1.0, 1.0, 2.0]]);
        assert_eq!(z[0][0], z[0][1]);
        assert!(z[0][2] > z[0][0]);
    }
}
