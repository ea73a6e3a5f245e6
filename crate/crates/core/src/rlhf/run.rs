use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ddpo::{ddpo_update, DdpoConfig};
use super::rollout::{collect_rollouts, normalize_advantages, reward_conditions, sample_diversity, score_layouts};
use crate::codec::Codec;
use crate::diffusion::{sample_batch, DiffusionModel, SampleConfig};
use crate::error::{Error, Result};
use crate::metrics::mean;
use crate::nn::Adam;
use crate::rewards::RewardModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlhfConfig {
    pub ddpo: DdpoConfig,
    pub iterations: usize,
    pub diversity_samples: usize,
    /// Fresh samples used to compare the start and end policies.
    pub eval_samples: usize,
}

impl Default for RlhfConfig {
    fn default() -> Self {
        Self { ddpo: DdpoConfig::default(), iterations: 20, diversity_samples: 32, eval_samples: 128 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterLog {
    pub iter: usize,
    /// Mean terminal reward of the iteration's rollouts.
    pub mean_reward: f64,
    pub clip_frac: f64,
    /// Mean pairwise Chamfer among fixed-seed samples of the rollout policy.
    pub diversity: f64,
    pub mean_ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RlhfReport {
    pub log: Vec<IterLog>,
    pub base_reward: f64,
    pub final_reward: f64,
    pub base_diversity: f64,
    pub final_diversity: f64,
}

/// Mean reward of `n` fresh samples with a fixed seed.
pub fn eval_policy_reward(policy: &DiffusionModel, codec: &Codec, reward: &RewardModel, n: usize, guidance: f64, seed: u64) -> Result<f64> {
    let prompts: Vec<usize> = (0..policy.spec().prompts.len().max(1)).collect();
    let conds: Vec<usize> = (0..n).map(|i| prompts[i % prompts.len()]).collect();
    let trajs = sample_batch(policy, codec, &conds, None, &SampleConfig { guidance, seed, record: false })?;
    let map = reward_conditions(policy, reward)?;
    let layouts: Vec<_> = trajs.into_iter().map(|t| t.layout).collect();
    let rconds: Vec<usize> = conds.iter().map(|&c| map[c]).collect();
    Ok(mean(&score_layouts(codec, reward, &layouts, &rconds)?))
}

/// Alternates rollout collection, advantage normalization and clipped
/// updates for `cfg.iterations` rounds.
pub fn run_rlhf(policy: &DiffusionModel, codec: &Codec, reward: &RewardModel, cfg: &RlhfConfig, seed: u64) -> Result<(DiffusionModel, RlhfReport)> {
    cfg.ddpo.validate(policy.schedule().steps())?;
    if cfg.diversity_samples < 2 {
        return Err(Error::Config("diversity needs at least two samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval_seed: u64 = rng.random();
    let div_seed: u64 = rng.random();
    let prompts: Vec<usize> = (0..policy.spec().prompts.len().max(1)).collect();
    let g = cfg.ddpo.guidance;
    let mut policy = policy.clone();
    let mut report = RlhfReport {
        base_reward: eval_policy_reward(&policy, codec, reward, cfg.eval_samples, g, eval_seed)?,
        base_diversity: sample_diversity(&policy, codec, &prompts, cfg.diversity_samples, g, div_seed)?,
        ..Default::default()
    };
    let mut opt = Adam::new(policy.store(), cfg.ddpo.optim.clone());
    let mut diversity = report.base_diversity;
    for iter in 0..cfg.iterations {
        let mut batch = collect_rollouts(&policy, codec, reward, &prompts, cfg.ddpo.n_rollouts, g, rng.random())?;
        normalize_advantages(&mut batch)?;
        let stats = ddpo_update(&mut policy, &batch, &cfg.ddpo, Some(&mut opt), rng.random())?;
        report.log.push(IterLog { iter, mean_reward: stats.mean_reward, clip_frac: stats.clip_frac, diversity, mean_ratio: stats.mean_ratio });
        diversity = sample_diversity(&policy, codec, &prompts, cfg.diversity_samples, g, div_seed)?;
    }
    report.final_diversity = diversity;
    report.final_reward = eval_policy_reward(&policy, codec, reward, cfg.eval_samples, g, eval_seed)?;
    Ok((policy, report))
}
