//! z-test on the difference of two criteria computed on the same subjects.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::modelsel::{sum_se, CriterionResult};

/// One-tailed critical values at the 5%, 1% and 0.1% levels.
pub const CRITICAL_VALUES: [(f64, f64); 3] = [(0.05, 1.65), (0.01, 2.33), (0.001, 3.09)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub level: f64,
    pub critical_value: f64,
    /// `true` when the second model is significantly better.
    pub prefer_b: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    /// `a.estimate - b.estimate`; positive when `b` has the lower criterion.
    pub delta: f64,
    pub se_delta: f64,
    #[serde(with = "crate::io::nonfinite")]
    pub z: f64,
    /// `P(Z > z)` under the standard normal.
    pub p_one_tailed: f64,
    pub decisions: Vec<Decision>,
}

/// Compare `a` against `b`. When every pointwise difference is equal the
/// standard error is zero and `z` is `+inf` or `-inf` by the sign of
/// `delta`, or zero when `delta` is zero.
pub fn compare(a: &CriterionResult, b: &CriterionResult) -> Result<ComparisonResult> {
    let n = a.pointwise.len();
    if n != b.pointwise.len() {
        return Err(Error::Dimension(format!(
            "criteria cover {n} and {} subjects",
            b.pointwise.len()
        )));
    }
    let diff: Vec<f64> = a.pointwise.iter().zip(&b.pointwise).map(|(x, y)| x - y).collect();
    let delta: f64 = diff.iter().sum();
    let se_delta = sum_se(&diff);
    let z = if se_delta > 0.0 {
        delta / se_delta
    } else if delta > 0.0 {
        f64::INFINITY
    } else if delta < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    };
    let std = Normal::standard();
    let p_one_tailed = if z.is_infinite() {
        if z > 0.0 {
            0.0
        } else {
            1.0
        }
    } else {
        std.sf(z)
    };
    let decisions = CRITICAL_VALUES
        .iter()
        .map(|&(level, critical_value)| Decision {
            level,
            critical_value,
            prefer_b: z > critical_value,
        })
        .collect();
    Ok(ComparisonResult {
        delta,
        se_delta,
        z,
        p_one_tailed,
        decisions,
    })
}
