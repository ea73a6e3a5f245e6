use serde::{Deserialize, Serialize};

use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::revision::RevisionSequence;
use crate::rewards::{
    evaluate_regression, label_sequences, latent_pairs, pairwise_accuracy, pretrain_then_finetune, split_by_group, RewardConfig, RewardData, RewardModel,
    RewardReport,
};

/// Held-out quality of a reward model on synthetic sequences it never saw.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardEval {
    pub heldout_examples: usize,
    pub spearman: Option<f64>,
    pub mse: Option<f64>,
    pub pairwise_accuracy: Option<f64>,
    /// Accuracy on pairs whose rejected layout is from the first half of its sequence.
    pub early_accuracy: Option<f64>,
}

pub struct RewardStage {
    pub model: RewardModel,
    pub report: RewardReport,
    pub eval: RewardEval,
}

/// Labels both sequence sets, holds out every `holdout_every`-th synthetic
/// sequence, trains in two phases and evaluates on the held-out part.
pub fn train_reward_stage(
    codec: &Codec,
    prompts: &[String],
    synthetic: &[RevisionSequence],
    logged: &[RevisionSequence],
    cfg: &RewardConfig,
    holdout_every: usize,
    seed: u64,
) -> Result<RewardStage> {
    if synthetic.is_empty() {
        return Err(Error::Empty("no synthetic revision sequences".into()));
    }
    let offset = synthetic.len();
    if cfg.variant.is_regression() {
        let all = label_sequences(codec, synthetic, cfg.variant, prompts, 0)?;
        let fine = label_sequences(codec, logged, cfg.variant, prompts, offset)?;
        let (train, held) = split_by_group(&all, |x| x.group, holdout_every);
        let (model, report) = pretrain_then_finetune(cfg, prompts, RewardData::Regression(&train), RewardData::Regression(&fine), seed)?;
        let eval = if held.is_empty() {
            RewardEval::default()
        } else {
            let e = evaluate_regression(&model, &held)?;
            RewardEval { heldout_examples: held.len(), spearman: Some(e.spearman), mse: Some(e.mse), ..Default::default() }
        };
        Ok(RewardStage { model, report, eval })
    } else {
        let all = latent_pairs(codec, synthetic, prompts, 0)?;
        let fine = latent_pairs(codec, logged, prompts, offset)?;
        let (train, held) = split_by_group(&all, |x| x.group, holdout_every);
        let (model, report) = pretrain_then_finetune(cfg, prompts, RewardData::Preference(&train), RewardData::Preference(&fine), seed)?;
        let eval = if held.is_empty() {
            RewardEval::default()
        } else {
            RewardEval {
                heldout_examples: held.len(),
                pairwise_accuracy: Some(pairwise_accuracy(&model, &held)),
                early_accuracy: Some(pairwise_accuracy(&model, held.iter().filter(|p| p.is_early()))),
                ..Default::default()
            }
        };
        Ok(RewardStage { model, report, eval })
    }
}
