//! Policy-gradient finetuning of the denoiser against a reward model.

mod ddpo;
mod mdp;
mod rollout;
mod run;

pub use ddpo::{ddpo_update, surrogate_loss_graph, window_examples, DdpoConfig, UpdateStats};
pub use mdp::{MdpState, MdpView};
pub use rollout::{collect_rollouts, normalize_advantages, reward_conditions, sample_diversity, score_layouts, RolloutBatch};
pub use run::{eval_policy_reward, run_rlhf, IterLog, RlhfConfig, RlhfReport};
