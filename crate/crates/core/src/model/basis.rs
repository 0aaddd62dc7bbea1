use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest power of time a basis term may carry.
pub const MAX_TIME_POWER: u32 = 2;

/// One column of a fixed- or random-effect design vector.
///
/// Terms are written in config files as strings:
/// `intercept`, `time`, `time^2`, `<covariate>`, `time:<covariate>`,
/// `time^2:<covariate>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BasisTerm {
    Intercept,
    TimePower(u32),
    Covariate(String),
    TimeCovariateInteraction(u32, String),
}

impl BasisTerm {
    pub fn covariate(&self) -> Option<&str> {
        match self {
            BasisTerm::Covariate(name) | BasisTerm::TimeCovariateInteraction(_, name) => {
                Some(name)
            }
            _ => None,
        }
    }

    pub fn time_power(&self) -> u32 {
        match self {
            BasisTerm::TimePower(k) | BasisTerm::TimeCovariateInteraction(k, _) => *k,
            _ => 0,
        }
    }

    /// Evaluate the term at time `t`.
    pub fn eval(&self, covariates: &BTreeMap<String, f64>, t: f64) -> Result<f64> {
        let cov = |name: &str| {
            covariates
                .get(name)
                .copied()
                .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
        };
        Ok(match self {
            BasisTerm::Intercept => 1.0,
            BasisTerm::TimePower(k) => t.powi(*k as i32),
            BasisTerm::Covariate(name) => cov(name)?,
            BasisTerm::TimeCovariateInteraction(k, name) => t.powi(*k as i32) * cov(name)?,
        })
    }
}

fn parse_power(s: &str) -> Result<u32> {
    let k = match s {
        "time" => 1,
        _ => {
            let rest = s
                .strip_prefix("time^")
                .ok_or_else(|| Error::Config(format!("invalid time term `{s}`")))?;
            rest.parse::<u32>()
                .map_err(|_| Error::Config(format!("invalid time power in `{s}`")))?
        }
    };
    if k == 0 || k > MAX_TIME_POWER {
        return Err(Error::Config(format!(
            "time power {k} unsupported (1..={MAX_TIME_POWER})"
        )));
    }
    Ok(k)
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

impl FromStr for BasisTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "intercept" {
            return Ok(BasisTerm::Intercept);
        }
        if s == "time" || s.starts_with("time^") {
            if let Some((lhs, rhs)) = s.split_once(':') {
                if !valid_name(rhs) {
                    return Err(Error::Config(format!("invalid covariate name in `{s}`")));
                }
                return Ok(BasisTerm::TimeCovariateInteraction(
                    parse_power(lhs)?,
                    rhs.to_string(),
                ));
            }
            return Ok(BasisTerm::TimePower(parse_power(s)?));
        }
        if let Some(rhs) = s.strip_prefix("time:") {
            if !valid_name(rhs) {
                return Err(Error::Config(format!("invalid covariate name in `{s}`")));
            }
            return Ok(BasisTerm::TimeCovariateInteraction(1, rhs.to_string()));
        }
        if !valid_name(s) {
            return Err(Error::Config(format!("invalid basis term `{s}`")));
        }
        Ok(BasisTerm::Covariate(s.to_string()))
    }
}

impl TryFrom<String> for BasisTerm {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BasisTerm> for String {
    fn from(term: BasisTerm) -> String {
        term.to_string()
    }
}

impl fmt::Display for BasisTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisTerm::Intercept => write!(f, "intercept"),
            BasisTerm::TimePower(1) => write!(f, "time"),
            BasisTerm::TimePower(k) => write!(f, "time^{k}"),
            BasisTerm::Covariate(name) => write!(f, "{name}"),
            BasisTerm::TimeCovariateInteraction(1, name) => write!(f, "time:{name}"),
            BasisTerm::TimeCovariateInteraction(k, name) => write!(f, "time^{k}:{name}"),
        }
    }
}

/// Design vector for `basis` at time `t`.
pub fn build_design_row(
    basis: &[BasisTerm],
    covariates: &BTreeMap<String, f64>,
    t: f64,
) -> Result<Vec<f64>> {
    basis.iter().map(|term| term.eval(covariates, t)).collect()
}
