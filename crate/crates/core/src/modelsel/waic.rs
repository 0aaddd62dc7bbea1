//! Widely applicable information criterion.

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, sample_variance};
use crate::modelsel::{sum_se, CriterionResult, PointwiseLogLik};

/// `-2 sum_i (lppd_i - p_i)` with `lppd_i` the log mean predictive density and
/// `p_i` the draw variance of the log likelihood.
pub fn waic(pll: &PointwiseLogLik) -> Result<CriterionResult> {
    let s = pll.n_draws();
    if s < 2 {
        return Err(Error::Estimator(format!("WAIC needs at least 2 draws, got {s}")));
    }
    let log_s = (s as f64).ln();
    let mut pointwise = Vec::with_capacity(pll.n_subjects());
    let mut p_eff = 0.0;
    for i in 0..pll.n_subjects() {
        let col = pll.subject(i);
        let lppd = log_sum_exp(&col) - log_s;
        let p = sample_variance(&col);
        p_eff += p;
        pointwise.push(-2.0 * (lppd - p));
    }
    Ok(CriterionResult {
        estimate: pointwise.iter().sum(),
        se: sum_se(&pointwise),
        pointwise,
        p_eff,
        pareto_khat: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_draws_one_subject() {
        let pll = PointwiseLogLik::new(vec![vec![0.5f64.ln()], vec![0.25f64.ln()]]).unwrap();
        let r = waic(&pll).unwrap();
        let p = 2f64.ln().powi(2) / 2.0;
        assert!((r.p_eff - p).abs() < 1e-12);
        assert!((r.p_eff - 0.24023).abs() < 1e-5);
        let expected = -2.0 * (0.375f64.ln() - p);
        assert!((r.estimate - expected).abs() < 1e-12);
        assert!((r.estimate - 2.44211).abs() < 1e-5);
        assert_eq!(r.se, 0.0);
    }

    #[test]
    fn identical_draws_have_no_penalty() {
        let row = vec![-1.0, -2.5, -0.3];
        let pll = PointwiseLogLik::new(vec![row.clone(); 5]).unwrap();
        let r = waic(&pll).unwrap();
        assert_eq!(r.p_eff, 0.0);
        let lppd: f64 = row.iter().sum();
        assert!((r.estimate + 2.0 * lppd).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariance() {
        let rows = vec![vec![-1.0, -2.0, -0.7], vec![-1.3, -1.1, -0.2], vec![-0.9, -2.6, -0.5]];
        let a = waic(&PointwiseLogLik::new(rows.clone()).unwrap()).unwrap();
        let mut shuffled: Vec<Vec<f64>> = rows.iter().rev().map(|r| vec![r[2], r[0], r[1]]).collect();
        shuffled.swap(0, 1);
        let b = waic(&PointwiseLogLik::new(shuffled).unwrap()).unwrap();
        assert!((a.estimate - b.estimate).abs() < 1e-12);
        assert!((a.se - b.se).abs() < 1e-12);
    }

    #[test]
    fn single_draw_rejected() {
        assert!(waic(&PointwiseLogLik::new(vec![vec![0.0]]).unwrap()).is_err());
    }
}
