use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Univariate prior family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Prior {
    Normal { mean: f64, sd: f64 },
    /// Shape / rate parameterization.
    Gamma { shape: f64, rate: f64 },
    /// Normal(0, scale²) folded onto the positive half-line.
    HalfNormal { scale: f64 },
    InverseGamma { shape: f64, scale: f64 },
}

impl Prior {
    pub fn validate(&self, positive_param: bool, what: &str) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        let valid = match *self {
            Prior::Normal { mean, sd } => mean.is_finite() && ok(sd),
            Prior::Gamma { shape, rate } => ok(shape) && ok(rate),
            Prior::HalfNormal { scale } => ok(scale),
            Prior::InverseGamma { shape, scale } => ok(shape) && ok(scale),
        };
        if !valid {
            return Err(Error::Config(format!("invalid hyperparameters for {what}: {self:?}")));
        }
        if !positive_param && !matches!(self, Prior::Normal { .. }) {
            return Err(Error::Config(format!(
                "{what} is real-valued; only a normal prior is allowed, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Log density at `x`; `-inf` outside the support.
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Prior::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                -0.5 * (2.0 * PI * sd * sd).ln() - 0.5 * z * z
            }
            Prior::Gamma { shape, rate } => {
                if x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                if x == 0.0 {
                    return if shape < 1.0 {
                        f64::INFINITY
                    } else if shape == 1.0 {
                        shape * rate.ln() - ln_gamma(shape)
                    } else {
                        f64::NEG_INFINITY
                    };
                }
                shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
            }
            Prior::HalfNormal { scale } => {
                if x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                let z = x / scale;
                LN_2 - 0.5 * (2.0 * PI * scale * scale).ln() - 0.5 * z * z
            }
            Prior::InverseGamma { shape, scale } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
            }
        }
    }

    /// d/dx of the log density, valid inside the support.
    pub fn d_log_density(&self, x: f64) -> f64 {
        match *self {
            Prior::Normal { mean, sd } => -(x - mean) / (sd * sd),
            Prior::Gamma { shape, rate } => (shape - 1.0) / x - rate,
            Prior::HalfNormal { scale } => -x / (scale * scale),
            Prior::InverseGamma { shape, scale } => -(shape + 1.0) / x + scale / (x * x),
        }
    }

    /// Location used to centre dispersed initial values.
    pub fn center(&self) -> f64 {
        match *self {
            Prior::Normal { mean, .. } => mean,
            Prior::Gamma { shape, rate } => shape / rate,
            Prior::HalfNormal { scale } => scale,
            Prior::InverseGamma { shape, scale } => {
                if shape > 1.0 {
                    scale / (shape - 1.0)
                } else {
                    1.0
                }
            }
        }
    }
}

/// Priors per parameter group. `psi` covers both the membership intercepts
/// and the covariate coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub beta: Prior,
    pub gamma: Prior,
    pub weibull_log_scale: Prior,
    pub alpha: Prior,
    pub psi: Prior,
    pub weibull_shape: Prior,
    pub sigma2: Prior,
    pub re_variance: Prior,
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        self.beta.validate(false, "beta")?;
        self.gamma.validate(false, "gamma")?;
        self.weibull_log_scale.validate(false, "weibull_log_scale")?;
        self.alpha.validate(false, "alpha")?;
        self.psi.validate(false, "psi")?;
        self.weibull_shape.validate(true, "weibull_shape")?;
        self.sigma2.validate(true, "sigma2")?;
        self.re_variance.validate(true, "re_variance")?;
        Ok(())
    }

    /// The simulation-study priors. With a single class the random-effect
    /// variances get an InverseGamma(0.01, 0.01) prior instead of
    /// Gamma(1.5, 1.5).
    pub fn simulation_default(n_classes: usize) -> Self {
        let re_variance = if n_classes == 1 {
            Prior::InverseGamma {
                shape: 0.01,
                scale: 0.01,
            }
        } else {
            Prior::Gamma {
                shape: 1.5,
                rate: 1.5,
            }
        };
        let wide = Prior::Normal { mean: 0.0, sd: 5.0 };
        Self {
            beta: wide,
            gamma: wide,
            weibull_log_scale: wide,
            alpha: wide,
            psi: Prior::Normal { mean: 0.0, sd: 2.0 },
            weibull_shape: Prior::Gamma {
                shape: 2.0,
                rate: 0.5,
            },
            sigma2: Prior::HalfNormal { scale: 0.5 },
            re_variance,
        }
    }
}
