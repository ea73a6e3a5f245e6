//! Effort-predicting reward models over codec latents.

mod data;
mod model;
mod normalize;
mod train;

pub use data::{label_sequences, latent_pairs, LabeledLatent, LatentPair, RewardData};
pub use model::{RewardModel, RewardSpec, RewardVariant};
pub use normalize::{fit_normalizer, Normalizer, TargetTransform};
pub use train::{
    evaluate_regression, pairwise_accuracy, pretrain_then_finetune, split_by_group, train_preference, train_rare_regression, PhaseConfig, PhaseReport,
    RegressionEval, RewardConfig, RewardReport,
};
