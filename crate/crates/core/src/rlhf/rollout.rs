use crate::codec::Codec;
use crate::diffusion::{sample_batch, DiffusionModel, SampleConfig, Trajectory};
use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::metrics::{mean, mean_pairwise_chamfer, std_dev};
use crate::rewards::RewardModel;

/// Sampled chains with terminal rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub trajectories: Vec<Trajectory>,
    /// Terminal reward of each trajectory.
    pub rewards: Vec<f64>,
    /// `step_rewards[i][t]` for `t = 0..=T`; nonzero only at `t = 0`.
    pub step_rewards: Vec<Vec<f64>>,
    pub advantages: Vec<f64>,
    /// Content hash of the policy that sampled the batch.
    pub behavior: String,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn mean_reward(&self) -> f64 {
        mean(&self.rewards)
    }
}

/// Maps each policy prompt (and the null prompt) onto the reward model's
/// prompt table by id.
pub fn reward_conditions(policy: &DiffusionModel, reward: &RewardModel) -> Result<Vec<usize>> {
    let prompts = &policy.spec().prompts;
    let mut map = Vec::with_capacity(prompts.len() + 1);
    for p in prompts {
        map.push(reward.prompt_index(Some(p)).ok_or_else(|| Error::Config(format!("reward model does not know prompt `{p}`")))?);
    }
    map.push(reward.null_prompt());
    Ok(map)
}

/// Scores decoded layouts after re-encoding them with `codec`.
pub fn score_layouts(codec: &Codec, reward: &RewardModel, layouts: &[Layout], conds: &[usize]) -> Result<Vec<f64>> {
    let tokens = codec.encode_batch(layouts)?;
    Ok(reward.score_batch(&tokens.iter().collect::<Vec<_>>(), conds))
}

/// Samples `n` chains cycling through `prompts` (policy prompt indices) and
/// scores each final layout.
pub fn collect_rollouts(
    policy: &DiffusionModel,
    codec: &Codec,
    reward: &RewardModel,
    prompts: &[usize],
    n: usize,
    guidance: f64,
    seed: u64,
) -> Result<RolloutBatch> {
    if prompts.is_empty() || n == 0 {
        return Err(Error::Config("rollouts need at least one prompt and one chain".into()));
    }
    let conds: Vec<usize> = (0..n).map(|i| prompts[i % prompts.len()]).collect();
    let trajectories = sample_batch(policy, codec, &conds, None, &SampleConfig { guidance, seed, record: true })?;
    let map = reward_conditions(policy, reward)?;
    let layouts: Vec<Layout> = trajectories.iter().map(|t| t.layout.clone()).collect();
    let rconds: Vec<usize> = conds.iter().map(|&c| map[c]).collect();
    let rewards = score_layouts(codec, reward, &layouts, &rconds)?;
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(Error::Numerical(format!("non-finite reward for rollout {i}")));
    }
    let big_t = policy.schedule().steps();
    let step_rewards = rewards
        .iter()
        .map(|&r| {
            let mut v = vec![0.0; big_t + 1];
            v[0] = r;
            v
        })
        .collect();
    Ok(RolloutBatch { trajectories, rewards, step_rewards, advantages: vec![0.0; n], behavior: policy.content_hash() })
}

/// `(r - mean) / (sd + 1e-8)` with the population standard deviation.
pub fn normalize_advantages(batch: &mut RolloutBatch) -> Result<()> {
    if batch.rewards.len() < 2 {
        return Err(Error::Config("advantage normalization needs at least two rollouts".into()));
    }
    let (m, s) = (mean(&batch.rewards), std_dev(&batch.rewards));
    batch.advantages = batch.rewards.iter().map(|r| (r - m) / (s + 1e-8)).collect();
    Ok(())
}

/// Mean pairwise Chamfer distance among `n` fresh samples.
pub fn sample_diversity(policy: &DiffusionModel, codec: &Codec, prompts: &[usize], n: usize, guidance: f64, seed: u64) -> Result<f64> {
    let conds: Vec<usize> = (0..n).map(|i| prompts[i % prompts.len()]).collect();
    let trajs = sample_batch(policy, codec, &conds, None, &SampleConfig { guidance, seed, record: false })?;
    mean_pairwise_chamfer(&trajs.into_iter().map(|t| t.layout).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rewards: Vec<f64>) -> RolloutBatch {
        let n = rewards.len();
        RolloutBatch { trajectories: Vec::new(), rewards, step_rewards: Vec::new(), advantages: vec![0.0; n], behavior: String::new() }
    }

    #[test]
    fn two_point_advantages() {
        let mut b = batch(vec![1.0, 3.0]);
        normalize_advantages(&mut b).unwrap();
        assert!((b.advantages[0] + 1.0).abs() < 1e-7 && (b.advantages[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn constant_rewards_give_zero_advantages() {
        let mut b = batch(vec![0.7; 5]);
        normalize_advantages(&mut b).unwrap();
        assert!(b.advantages.iter().all(|a| a.abs() < 1e-6));
    }

    #[test]
    fn advantages_are_centred() {
        let mut b = batch((0..33).map(|i| ((i * 7919) % 101) as f64 * 0.13 - 4.0).collect());
        normalize_advantages(&mut b).unwrap();
        assert!(mean(&b.advantages).abs() < 1e-6);
        assert!(normalize_advantages(&mut batch(vec![1.0])).is_err());
    }
}
