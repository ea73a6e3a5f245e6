use serde::{Deserialize, Serialize};

use super::model::RewardVariant;
use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::nn::Mat;
use crate::revision::RevisionSequence;

/// Encoded layout with a raw (unnormalized) effort target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledLatent {
    pub z: Mat,
    pub cond: usize,
    pub target: f64,
    /// Source sequence, for group-aware splits.
    pub group: usize,
    pub step: usize,
}

/// Encoded (final, intermediate) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentPair {
    pub preferred: Mat,
    pub rejected: Mat,
    pub cond: usize,
    pub group: usize,
    /// Step of the rejected layout and the sequence's `N`.
    pub step: usize,
    pub n: usize,
}

impl LatentPair {
    /// Rejected layout comes from the first half of its sequence.
    pub fn is_early(&self) -> bool {
        2 * self.step < self.n
    }
}

/// Training data of either kind.
#[derive(Clone, Copy, Debug)]
pub enum RewardData<'a> {
    Regression(&'a [LabeledLatent]),
    Preference(&'a [LatentPair]),
}

impl RewardData<'_> {
    pub fn len(&self) -> usize {
        match self {
            RewardData::Regression(d) => d.len(),
            RewardData::Preference(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn prompt_cond(prompts: &[String], layout: &Layout) -> Result<usize> {
    match layout.prompt_id.as_deref() {
        None => Ok(prompts.len()),
        Some(id) => prompts.iter().position(|p| p == id).ok_or_else(|| Error::Config(format!("prompt `{id}` not in the reward prompt table"))),
    }
}

/// One example per revision step, labelled with `d_i` or `τ_i`. Groups are
/// numbered from `group_offset` in sequence order.
pub fn label_sequences(
    codec: &Codec,
    seqs: &[RevisionSequence],
    variant: RewardVariant,
    prompts: &[String],
    group_offset: usize,
) -> Result<Vec<LabeledLatent>> {
    if !variant.is_regression() {
        return Err(Error::Config("preference data is built with latent_pairs".into()));
    }
    let mut out = Vec::new();
    for (g, seq) in seqs.iter().enumerate() {
        let layouts: Vec<Layout> = seq.steps.iter().map(|s| s.layout.clone()).collect();
        let tokens = codec.encode_batch(&layouts)?;
        let cond = prompt_cond(prompts, seq.final_layout())?;
        for (i, z) in tokens.into_iter().enumerate() {
            let target = if variant == RewardVariant::Chamfer { seq.d[i] } else { seq.tau[i] };
            out.push(LabeledLatent { z, cond, target, group: group_offset + g, step: i });
        }
    }
    Ok(out)
}

/// Final-over-intermediate pairs for every step before the last.
pub fn latent_pairs(codec: &Codec, seqs: &[RevisionSequence], prompts: &[String], group_offset: usize) -> Result<Vec<LatentPair>> {
    let mut out = Vec::new();
    for (g, seq) in seqs.iter().enumerate() {
        let layouts: Vec<Layout> = seq.steps.iter().map(|s| s.layout.clone()).collect();
        let mut tokens = codec.encode_batch(&layouts)?;
        let cond = prompt_cond(prompts, seq.final_layout())?;
        let fin = tokens.pop().expect("sequence has steps");
        let n = seq.n();
        for (i, rejected) in tokens.into_iter().enumerate() {
            out.push(LatentPair { preferred: fin.clone(), rejected, cond, group: group_offset + g, step: i, n });
        }
    }
    Ok(out)
}
