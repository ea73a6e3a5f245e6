use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rollout::RolloutBatch;
use crate::diffusion::{transition_logprob_graph, DiffusionModel, TransitionBatch};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Graph, Mat, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpoConfig {
    pub clip: f64,
    /// Optimise only the transitions at `t = 1..=last_k`.
    pub last_k: usize,
    pub n_rollouts: usize,
    /// (trajectory, timestep) examples per gradient step.
    pub minibatch: usize,
    pub inner_epochs: usize,
    pub guidance: f64,
    pub optim: AdamConfig,
}

impl Default for DdpoConfig {
    fn default() -> Self {
        Self { clip: 1e-2, last_k: 10, n_rollouts: 256, minibatch: 64, inner_epochs: 1, guidance: 1.0, optim: AdamConfig::with_lr(3e-5) }
    }
}

impl DdpoConfig {
    pub fn validate(&self, steps: usize) -> Result<()> {
        let mut errs = Vec::new();
        if self.last_k == 0 || self.last_k > steps {
            errs.push(format!("last_k must be in 1..={steps}, got {}", self.last_k));
        }
        if !(self.clip > 0.0) {
            errs.push(format!("clip must be positive, got {}", self.clip));
        }
        if self.n_rollouts < 2 {
            errs.push("n_rollouts must be at least 2".into());
        }
        if self.minibatch == 0 || self.inner_epochs == 0 {
            errs.push("minibatch and inner_epochs must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub mean_ratio: f64,
    /// Fraction of examples whose ratio left `[1 - clip, 1 + clip]`.
    pub clip_frac: f64,
    pub mean_reward: f64,
    pub mean_loss: f64,
    pub examples: usize,
    pub gradient_steps: usize,
    /// Extremes of the clamped ratios actually used in the clipped branch.
    pub clipped_ratio_min: f64,
    pub clipped_ratio_max: f64,
    /// Ratios of the first minibatch, before any parameter change.
    pub first_ratios: Vec<f64>,
}

/// `(trajectory, t)` pairs inside the optimisation window.
pub fn window_examples(batch: &RolloutBatch, last_k: usize) -> Vec<(usize, usize)> {
    (0..batch.len()).flat_map(|i| (1..=last_k.min(batch.trajectories[i].steps())).map(move |t| (i, t))).collect()
}

/// Clipped surrogate on `examples`; returns `(loss, ratio, clamped ratio)`,
/// the last two as `n x 1` columns.
pub fn surrogate_loss_graph(
    policy: &DiffusionModel,
    g: &mut Graph,
    batch: &RolloutBatch,
    examples: &[(usize, usize)],
    clip: f64,
    guidance: f64,
) -> (Var, Var, Var) {
    let trs = &batch.trajectories;
    let tb = TransitionBatch {
        z_t: examples.iter().map(|&(i, t)| trs[i].transition(t).0).collect(),
        z_prev: examples.iter().map(|&(i, t)| trs[i].transition(t).1).collect(),
        t: examples.iter().map(|&(_, t)| t).collect(),
        cond: examples.iter().map(|&(i, _)| trs[i].cond).collect(),
    };
    let n = examples.len();
    let logp = transition_logprob_graph(policy, g, &tb, guidance);
    let old = g.constant(Mat::from_vec(n, 1, examples.iter().map(|&(i, t)| -trs[i].transition(t).3).collect()));
    let log_ratio = g.add(logp, old);
    let ratio = g.exp(log_ratio);
    let adv = g.constant(Mat::from_vec(n, 1, examples.iter().map(|&(i, _)| batch.advantages[i]).collect()));
    let unclipped = g.mul(ratio, adv);
    let clamped = g.clamp(ratio, 1.0 - clip, 1.0 + clip);
    let clipped = g.mul(clamped, adv);
    let obj = g.minimum(unclipped, clipped);
    let mean = g.mean(obj);
    (g.scale(mean, -1.0), ratio, clamped)
}

/// One round of clipped importance-sampled updates over the window
/// transitions of `batch`, shuffled into minibatches.
pub fn ddpo_update(policy: &mut DiffusionModel, batch: &RolloutBatch, cfg: &DdpoConfig, opt: Option<&mut Adam>, seed: u64) -> Result<UpdateStats> {
    cfg.validate(policy.schedule().steps())?;
    if batch.advantages.len() != batch.len() {
        return Err(Error::Config("batch advantages are not normalized".into()));
    }
    let mut local;
    let opt = match opt {
        Some(o) => o,
        None => {
            local = Adam::new(policy.store(), cfg.optim.clone());
            &mut local
        }
    };
    let mut examples = window_examples(batch, cfg.last_k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats =
        UpdateStats { mean_reward: batch.mean_reward(), clipped_ratio_min: f64::INFINITY, clipped_ratio_max: f64::NEG_INFINITY, ..Default::default() };
    let (mut ratio_sum, mut clipped_count, mut loss_sum) = (0.0, 0usize, 0.0);
    for _ in 0..cfg.inner_epochs {
        examples.shuffle(&mut rng);
        for mb in examples.chunks(cfg.minibatch) {
            let (loss, ratios, clamped, grads) = {
                let mut g = Graph::new(policy.store());
                let (loss, ratio, clamped) = surrogate_loss_graph(policy, &mut g, batch, mb, cfg.clip, cfg.guidance);
                (g.value(loss).item(), g.value(ratio).clone(), g.value(clamped).clone(), g.backward(loss))
            };
            if let Some(k) = ratios.data().iter().position(|r| !r.is_finite()) {
                let (i, t) = mb[k];
                return Err(Error::Numerical(format!("non-finite importance ratio for trajectory {i} at t={t}")));
            }
            if stats.gradient_steps == 0 {
                stats.first_ratios = ratios.data().to_vec();
            }
            for (&r, &c) in ratios.data().iter().zip(clamped.data()) {
                ratio_sum += r;
                if (r - 1.0).abs() > cfg.clip {
                    clipped_count += 1;
                }
                stats.clipped_ratio_min = stats.clipped_ratio_min.min(c);
                stats.clipped_ratio_max = stats.clipped_ratio_max.max(c);
            }
            if !grads.is_finite() {
                return Err(Error::Numerical("non-finite surrogate gradient".into()));
            }
            opt.step(policy.store_mut(), &grads);
            loss_sum += loss;
            stats.examples += mb.len();
            stats.gradient_steps += 1;
        }
    }
    if stats.examples > 0 {
        stats.mean_ratio = ratio_sum / stats.examples as f64;
        stats.clip_frac = clipped_count as f64 / stats.examples as f64;
        stats.mean_loss = loss_sum / stats.gradient_steps as f64;
    }
    Ok(stats)
}
