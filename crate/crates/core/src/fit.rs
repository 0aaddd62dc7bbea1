//! End-to-end fitting: parallel chains, chain selection, class labels,
//! summaries and predictive criteria.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{mean, quantile_sorted, sample_variance};
use crate::model::{JointModel, ModelSpec, Parameters, PriorSpec, SubjectData};
use crate::modelsel::{pointwise_loglik, psis_loo, waic, CriterionResult, PointwiseLogLik};
use crate::sampler::weights::{DEFAULT_BETA, MIN_DRAWS};
use crate::sampler::{
    map_labels, posterior_class_probs, run_chains, sample_class_labels, select_chain, ChainDraws,
    ChainWeightReport, ClassDraws, NutsConfig, WeightInput,
};

fn default_beta() -> f64 {
    DEFAULT_BETA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Shared radius; the default is derived from the draws.
    #[serde(default)]
    pub epsilon: Option<f64>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            epsilon: None,
        }
    }
}

/// Everything needed to fit one model. `priors` defaults to the simulation
/// priors for the configured number of classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub priors: Option<PriorSpec>,
    #[serde(default)]
    pub sampler: NutsConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    /// Starting parameters per chain; missing entries use dispersed starts.
    #[serde(default)]
    pub inits: Vec<Parameters>,
}

impl FitConfig {
    pub fn priors(&self) -> PriorSpec {
        self.priors
            .clone()
            .unwrap_or_else(|| PriorSpec::simulation_default(self.model.n_classes))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.priors().validate()?;
        self.sampler.validate()?;
        if self.sampler.kept_draws() < MIN_DRAWS {
            return Err(Error::Config(format!(
                "each chain must keep at least {MIN_DRAWS} draws, got {}",
                self.sampler.kept_draws()
            )));
        }
        if !(self.selection.beta > 0.0 && self.selection.beta < 1.0) {
            return Err(Error::Config(format!(
                "selection beta must lie in (0, 1), got {}",
                self.selection.beta
            )));
        }
        if let Some(e) = self.selection.epsilon {
            if !(e > 0.0) {
                return Err(Error::Config(format!("epsilon must be positive, got {e}")));
            }
        }
        for p in &self.inits {
            p.check(&self.model)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub parameter_names: Vec<String>,
    pub subject_ids: Vec<String>,
    pub chains: Vec<ChainDraws>,
    /// Per chain, kept draws of the named parameters on the constrained scale.
    pub constrained: Vec<Vec<Vec<f64>>>,
    pub selection: ChainWeightReport,
    pub labels: ClassDraws,
    /// Subjects by classes.
    pub class_probs: Vec<Vec<f64>>,
    pub map: Vec<u32>,
    pub summary: Vec<ParamSummary>,
    pub pointwise: PointwiseLogLik,
    pub loo: CriterionResult,
    pub waic: CriterionResult,
}

impl FitResult {
    pub fn selected(&self) -> &ChainDraws {
        &self.chains[self.selection.selected_chain]
    }
}

/// Non-latent parameters of every draw on the constrained scale.
pub fn constrained_draws(model: &JointModel, chain: &ChainDraws) -> Vec<Vec<f64>> {
    let mut buf = Vec::new();
    chain
        .draws
        .iter()
        .map(|theta| {
            model.constrain_params(theta, &mut buf);
            buf.clone()
        })
        .collect()
}

/// Mean, SD and central 95% interval of each column.
pub fn summarize(names: &[String], draws: &[Vec<f64>]) -> Vec<ParamSummary> {
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mut col: Vec<f64> = draws.iter().map(|d| d[k]).collect();
            let m = mean(&col);
            let sd = sample_variance(&col).sqrt();
            col.sort_by(f64::total_cmp);
            ParamSummary {
                name: name.clone(),
                mean: m,
                sd,
                q025: quantile_sorted(&col, 0.025),
                q975: quantile_sorted(&col, 0.975),
            }
        })
        .collect()
}

/// Draws of a chain prepared for the weight estimator: constrained
/// parameters followed by random effects, and `log q` without the Jacobian.
pub fn weight_input(model: &JointModel, chain: &ChainDraws) -> WeightInput {
    let l = model.layout();
    let mut buf = Vec::new();
    let mut b = Vec::new();
    let mut points = Vec::with_capacity(chain.draws.len());
    let mut log_q = Vec::with_capacity(chain.draws.len());
    for (theta, lp) in chain.draws.iter().zip(&chain.lp) {
        model.constrain_params(theta, &mut buf);
        let mut p = buf.clone();
        l.random_effects(theta, &mut b);
        p.extend_from_slice(&b);
        points.push(p);
        log_q.push(lp - l.log_jacobian(theta));
    }
    WeightInput { points, log_q }
}

/// Run the full pipeline on `data`.
pub fn fit(config: &FitConfig, data: &[SubjectData]) -> Result<FitResult> {
    config.validate()?;
    let priors = config.priors();
    let model = JointModel::new(&config.model, &priors, data)?;
    let inits: Vec<Option<Parameters>> = config.inits.iter().cloned().map(Some).collect();
    let chains = run_chains(&model, &config.sampler, &inits)?;
    if chains.iter().all(|c| c.failed()) {
        let reasons: Vec<String> = chains
            .iter()
            .map(|c| format!("chain {}: {}", c.chain_id, c.failure.as_deref().unwrap_or("")))
            .collect();
        return Err(Error::AllChainsFailed(reasons.join("; ")));
    }
    let inputs: Vec<Option<WeightInput>> = chains
        .iter()
        .map(|c| (!c.failed()).then(|| weight_input(&model, c)))
        .collect();
    let selection = select_chain(&inputs, config.selection.beta, config.selection.epsilon)?;
    let chosen = &chains[selection.selected_chain];

    let labels = sample_class_labels(chosen, &model, config.sampler.seed)?;
    let class_probs = posterior_class_probs(&labels);
    let map = map_labels(&class_probs);
    let parameter_names = model.layout().parameter_names(&config.model);
    let constrained: Vec<Vec<Vec<f64>>> = chains.iter().map(|c| constrained_draws(&model, c)).collect();
    let summary = summarize(&parameter_names, &constrained[selection.selected_chain]);
    let pointwise = pointwise_loglik(chosen, &model)?;
    let loo = psis_loo(&pointwise)?;
    let waic = waic(&pointwise)?;
    Ok(FitResult {
        parameter_names,
        subject_ids: model.subject_ids().to_vec(),
        chains,
        constrained,
        selection,
        labels,
        class_probs,
        map,
        summary,
        pointwise,
        loo,
        waic,
    })
}

/// Fraction of subjects whose MAP class equals the true class, maximized
/// over relabelings of the fitted classes.
pub fn classification_accuracy(map: &[u32], truth: &[u32], n_classes: usize) -> Result<f64> {
    if map.len() != truth.len() || map.is_empty() {
        return Err(Error::Dimension(format!(
            "{} predicted and {} true labels",
            map.len(),
            truth.len()
        )));
    }
    let best = permutations(n_classes)
        .iter()
        .map(|perm| {
            map.iter()
                .zip(truth)
                .filter(|(m, t)| perm[**m as usize - 1] as u32 + 1 == **t)
                .count()
        })
        .max()
        .unwrap_or(0);
    Ok(best as f64 / map.len() as f64)
}

/// Best relabeling of fitted classes against true labels: `perm[fitted] =
/// true` (0-based).
pub fn best_permutation(map: &[u32], truth: &[u32], n_classes: usize) -> Vec<usize> {
    permutations(n_classes)
        .into_iter()
        .max_by_key(|perm| {
            map.iter()
                .zip(truth)
                .filter(|(m, t)| perm[**m as usize - 1] as u32 + 1 == **t)
                .count()
        })
        .unwrap_or_default()
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for k in 0..used.len() {
            if !used[k] {
                used[k] = true;
                prefix.push(k);
                go(prefix, used, out);
                prefix.pop();
                used[k] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_ignores_label_names() {
        let truth = [1, 1, 2, 2, 2];
        let map = [2, 2, 1, 1, 2];
        assert!((classification_accuracy(&map, &truth, 2).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(best_permutation(&map, &truth, 2), vec![1, 0]);
        assert_eq!(permutations(3).len(), 6);
        assert!(classification_accuracy(&map, &truth[..2], 2).is_err());
    }

    #[test]
    fn summary_quantiles_bracket_mean() {
        let draws: Vec<Vec<f64>> = (0..200).map(|i| vec![(i as f64 * 0.37).sin(), i as f64]).collect();
        let s = summarize(&["a".into(), "b".into()], &draws);
        for p in &s {
            assert!(p.q025 <= p.mean && p.mean <= p.q975);
            assert!(p.sd > 0.0);
        }
        assert!((s[1].mean - 99.5).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let toml_text = r#"
            [model]
            n_classes = 2
            fixed_basis = ["intercept", "time", "male"]
            random_basis = ["intercept", "time"]
            survival_covariates = ["age"]

            [sampler]
            iterations = 400
            warmup = 200
        "#;
        let mut c: FitConfig = toml::from_str(toml_text).unwrap();
        c.validate().unwrap();
        assert_eq!(c.priors(), PriorSpec::simulation_default(2));
        c.sampler.thin = 3;
        assert!(c.validate().is_err());
        c.sampler.thin = 1;
        c.selection.beta = 1.0;
        assert!(c.validate().is_err());
    }
}
