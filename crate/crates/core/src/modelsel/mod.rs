//! Predictive model comparison and convergence diagnostics.
//!
//! Criteria are on the deviance scale (`-2 x elpd`), so lower is better.

pub mod compare;
pub mod diagnostics;
pub mod psis;
pub mod waic;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::JointModel;
use crate::sampler::ChainDraws;

pub use compare::{compare, ComparisonResult, CRITICAL_VALUES};
pub use diagnostics::{ess, ess_mean, mcse_mean, split_rhat, split_rhat_classic};
pub use psis::{gpd_fit, psis_loo, psis_smooth, KHAT_WARNING};
pub use waic::waic;

/// Draws by subjects matrix of `log p(D_i | b, Theta)` with classes summed
/// out and the random-effect density left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseLogLik {
    pub values: Vec<Vec<f64>>,
}

impl PointwiseLogLik {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        let n = values.first().map_or(0, |r| r.len());
        if values.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("pointwise rows differ in length".into()));
        }
        Ok(Self { values })
    }

    pub fn n_draws(&self) -> usize {
        self.values.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.values.first().map_or(0, |r| r.len())
    }

    /// Column `i`: subject `i` across draws.
    pub fn subject(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[i]).collect()
    }
}

/// Result of WAIC or PSIS-LOO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub estimate: f64,
    pub se: f64,
    /// Per-subject contributions; they sum to `estimate`.
    pub pointwise: Vec<f64>,
    /// Effective number of parameters.
    pub p_eff: f64,
    #[serde(with = "crate::io::nonfinite::opt_vec")]
    pub pareto_khat: Option<Vec<f64>>,
}

/// `sqrt(n * Var(x))` with the `n - 1` variance; zero for a single value.
pub(crate) fn sum_se(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    (n as f64 * crate::math::sample_variance(x)).sqrt()
}

/// Evaluate the pointwise log likelihood at every kept draw of a chain.
pub fn pointwise_loglik(chain: &ChainDraws, model: &JointModel) -> Result<PointwiseLogLik> {
    if chain.draws.is_empty() {
        return Err(Error::Estimator(format!("chain {} has no draws", chain.chain_id)));
    }
    let rows: Vec<Vec<f64>> = chain
        .draws
        .par_iter()
        .map(|theta| model.pointwise_loglik(theta))
        .collect::<Result<_>>()?;
    for (s, row) in rows.iter().enumerate() {
        if let Some(i) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Estimator(format!(
                "pointwise log likelihood is {} at draw {s}, subject {}",
                row[i],
                model.subject_ids()[i]
            )));
        }
    }
    PointwiseLogLik::new(rows)
}
