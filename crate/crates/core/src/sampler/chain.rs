//! Single-chain driver and multi-chain orchestration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{JointModel, Parameters};
use crate::sampler::adapt::{find_reasonable_step_size, DualAveraging, MetricAdaptation};
use crate::sampler::nuts::{Nuts, State};
use crate::sampler::LogDensity;

/// RNG stream domains; the stream id is `(domain << 32) | index`.
pub mod stream {
    pub const CHAIN: u64 = 1;
    pub const LABELS: u64 = 2;
    pub const SIMULATE: u64 = 3;
}

/// Deterministic generator for `(seed, domain, index)`.
pub fn rng_for(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 32) | (index & 0xffff_ffff));
    rng
}

fn default_target_accept() -> f64 {
    0.8
}
fn default_max_tree_depth() -> usize {
    10
}
fn default_divergence_threshold() -> f64 {
    1000.0
}
fn default_thin() -> usize {
    1
}
fn default_chains() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NutsConfig {
    #[serde(default = "default_target_accept")]
    pub target_accept: f64,
    #[serde(default = "default_max_tree_depth")]
    pub max_tree_depth: usize,
    /// Total iterations per chain, warmup included.
    pub iterations: usize,
    pub warmup: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_divergence_threshold")]
    pub divergence_threshold: f64,
}

impl Default for NutsConfig {
    fn default() -> Self {
        Self {
            target_accept: 0.8,
            max_tree_depth: 10,
            iterations: 2000,
            warmup: 1000,
            thin: 1,
            chains: 4,
            seed: 0,
            divergence_threshold: 1000.0,
        }
    }
}

impl NutsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad(format!("target_accept must lie in (0, 1), got {}", self.target_accept));
        }
        if self.max_tree_depth == 0 {
            return bad("max_tree_depth must be positive".into());
        }
        if self.warmup >= self.iterations {
            return bad(format!(
                "warmup ({}) must be smaller than iterations ({})",
                self.warmup, self.iterations
            ));
        }
        if self.warmup < crate::sampler::adapt::MIN_WARMUP {
            return bad(format!(
                "warmup must be at least {}, got {}",
                crate::sampler::adapt::MIN_WARMUP,
                self.warmup
            ));
        }
        if self.thin == 0 {
            return bad("thin must be at least 1".into());
        }
        if self.chains == 0 {
            return bad("chains must be at least 1".into());
        }
        if !(self.divergence_threshold > 0.0) {
            return bad("divergence_threshold must be positive".into());
        }
        Ok(())
    }

    pub fn kept_draws(&self) -> usize {
        (self.iterations - self.warmup) / self.thin
    }
}

/// Output of one chain. `draws` are kept post-warmup rows on the
/// unconstrained scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub chain_id: usize,
    pub draws: Vec<Vec<f64>>,
    pub lp: Vec<f64>,
    pub accept_stat: Vec<f64>,
    pub divergent: Vec<bool>,
    pub tree_depth: Vec<usize>,
    pub n_leapfrog: Vec<usize>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    /// Divergences over all post-warmup iterations, thinned or not.
    pub post_warmup_divergences: usize,
    pub post_warmup_iterations: usize,
    /// Reason the chain must not be used, if any.
    pub failure: Option<String>,
}

impl ChainDraws {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn divergence_rate(&self) -> f64 {
        self.post_warmup_divergences as f64 / self.post_warmup_iterations.max(1) as f64
    }

    /// Column `k` of the draws.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[k]).collect()
    }
}

/// Run warmup and sampling from `init`, with `rng` owned by the chain.
pub fn run_chain_from<M: LogDensity + ?Sized>(
    model: &M,
    init: Vec<f64>,
    config: &NutsConfig,
    chain_id: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ChainDraws> {
    config.validate()?;
    if init.len() != model.dim() {
        return Err(Error::Dimension(format!(
            "initial point has length {}, model dimension {}",
            init.len(),
            model.dim()
        )));
    }
    let dim = model.dim();
    let mut z = State::new(model, init)?;
    let mut nuts = Nuts::new(1.0, vec![1.0; dim], config.max_tree_depth, config.divergence_threshold);
    find_reasonable_step_size(&mut nuts, model, &z, rng)?;
    let mut step = DualAveraging::new(config.target_accept, nuts.step_size);
    let mut metric = MetricAdaptation::new(dim, config.warmup)?;

    let n_post = config.iterations - config.warmup;
    let kept = config.kept_draws();
    let mut out = ChainDraws {
        chain_id,
        draws: Vec::with_capacity(kept),
        lp: Vec::with_capacity(kept),
        accept_stat: Vec::with_capacity(kept),
        divergent: Vec::with_capacity(kept),
        tree_depth: Vec::with_capacity(kept),
        n_leapfrog: Vec::with_capacity(kept),
        step_size: 0.0,
        inv_metric: vec![],
        post_warmup_divergences: 0,
        post_warmup_iterations: n_post,
        failure: None,
    };

    for _ in 0..config.warmup {
        let (next, stats) = nuts.transition(model, &z, rng);
        z = next;
        nuts.step_size = step.learn(stats.accept_stat);
        if let Some(var) = metric.learn(&z.q) {
            nuts.inv_metric = var;
            find_reasonable_step_size(&mut nuts, model, &z, rng)?;
            step.restart(nuts.step_size);
        }
        if nuts.step_size < 1e-12 {
            return Err(Error::Sampler(format!(
                "chain {chain_id}: adapted step size collapsed below 1e-12; \
                 consider rescaling or reparameterizing the model"
            )));
        }
    }
    nuts.step_size = step.final_step_size();
    if !(nuts.step_size >= 1e-12) {
        return Err(Error::Sampler(format!(
            "chain {chain_id}: adapted step size collapsed below 1e-12; \
             consider rescaling or reparameterizing the model"
        )));
    }

    for k in 0..n_post {
        let (next, stats) = nuts.transition(model, &z, rng);
        z = next;
        if stats.divergent {
            out.post_warmup_divergences += 1;
        }
        if (k + 1) % config.thin == 0 {
            out.draws.push(z.q.clone());
            out.lp.push(stats.lp);
            out.accept_stat.push(stats.accept_stat);
            out.divergent.push(stats.divergent);
            out.tree_depth.push(stats.tree_depth);
            out.n_leapfrog.push(stats.n_leapfrog);
        }
    }
    out.step_size = nuts.step_size;
    out.inv_metric = nuts.inv_metric;
    if 2 * out.post_warmup_divergences > n_post {
        out.failure = Some(format!(
            "{} of {} post-warmup iterations diverged",
            out.post_warmup_divergences, n_post
        ));
    }
    Ok(out)
}

/// Attempts at a finite starting point before giving up.
pub const INIT_ATTEMPTS: usize = 100;

/// One chain of the joint model. The initial point is drawn from the
/// chain's own stream; `init` overrides the dispersed parameter start.
pub fn run_chain(
    model: &JointModel,
    config: &NutsConfig,
    chain_id: usize,
    init: Option<&Parameters>,
) -> Result<ChainDraws> {
    let mut rng = rng_for(config.seed, stream::CHAIN, chain_id as u64);
    let mut last_err = None;
    for _ in 0..INIT_ATTEMPTS {
        let theta = model.initial_point(&mut rng, init)?;
        match State::new(model, theta.clone()) {
            Ok(_) => return run_chain_from(model, theta, config, chain_id, &mut rng),
            Err(e) => last_err = Some(e),
        }
    }
    Err(Error::Sampler(format!(
        "chain {chain_id}: no finite initial point after {INIT_ATTEMPTS} attempts ({})",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Run `config.chains` chains in parallel. Errors become failed chains.
pub fn run_chains(
    model: &JointModel,
    config: &NutsConfig,
    inits: &[Option<Parameters>],
) -> Result<Vec<ChainDraws>> {
    config.validate()?;
    let mut chains: Vec<ChainDraws> = (0..config.chains)
        .into_par_iter()
        .map(|c| {
            let init = inits.get(c).and_then(|p| p.as_ref());
            run_chain(model, config, c, init).unwrap_or_else(|e| ChainDraws {
                chain_id: c,
                draws: vec![],
                lp: vec![],
                accept_stat: vec![],
                divergent: vec![],
                tree_depth: vec![],
                n_leapfrog: vec![],
                step_size: f64::NAN,
                inv_metric: vec![],
                post_warmup_divergences: 0,
                post_warmup_iterations: config.iterations - config.warmup,
                failure: Some(e.to_string()),
            })
        })
        .collect();
    flag_stuck_chains(&mut chains);
    Ok(chains)
}

/// A usable chain whose step size is this many times smaller than another's
/// is treated as stuck.
pub const STUCK_STEP_RATIO: f64 = 1e-3;

/// Mark chains stuck in a needle-like region as failed. In a mixture, a
/// nearly empty class can collapse onto a few subjects and its variance
/// towards zero. The density there grows without bound, so such a chain
/// would otherwise dominate selection, while its step size has shrunk by
/// orders of magnitude compared with healthy chains.
pub fn flag_stuck_chains(chains: &mut [ChainDraws]) {
    let largest = chains
        .iter()
        .filter(|c| !c.failed())
        .map(|c| c.step_size)
        .fold(f64::NEG_INFINITY, f64::max);
    for c in chains.iter_mut().filter(|c| !c.failed()) {
        if c.step_size < STUCK_STEP_RATIO * largest {
            c.failure = Some(format!(
                "step size {:.3e} is below {STUCK_STEP_RATIO} of the largest across chains ({:.3e}); \
                 the chain looks stuck",
                c.step_size, largest
            ));
        }
    }
}
