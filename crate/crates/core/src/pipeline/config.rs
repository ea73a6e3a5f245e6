use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::CodecConfig;
use crate::diffusion::{BackboneArch, DiffusionConfig, SftConfig};
use crate::error::{Error, Result};
use crate::layout::CorpusConfig;
use crate::nn::AdamConfig;
use crate::revision::SynthConfig;
use crate::rewards::{RewardConfig, RewardVariant};
use crate::rlhf::RlhfConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardSection {
    /// Every n-th revision sequence is held out for evaluation.
    pub holdout_every: usize,
    pub chamfer: RewardConfig,
    pub keystroke: RewardConfig,
    pub preference: RewardConfig,
}

impl Default for RewardSection {
    fn default() -> Self {
        Self {
            holdout_every: 10,
            chamfer: RewardConfig::for_variant(RewardVariant::Chamfer),
            keystroke: RewardConfig::for_variant(RewardVariant::Keystroke),
            preference: RewardConfig::for_variant(RewardVariant::Preference),
        }
    }
}

impl RewardSection {
    pub fn variant(&self, v: RewardVariant) -> &RewardConfig {
        match v {
            RewardVariant::Chamfer => &self.chamfer,
            RewardVariant::Keystroke => &self.keystroke,
            RewardVariant::Preference => &self.preference,
        }
    }

    fn variants_mut(&mut self) -> [&mut RewardConfig; 3] {
        [&mut self.chamfer, &mut self.keystroke, &mut self.preference]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Samples drawn per method.
    pub n_samples: usize,
    pub guidance: f64,
    pub diversity_samples: usize,
    /// Reference layouts each sample is compared against for DocSim.
    pub docsim_reference: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_samples: 256, guidance: 1.0, diversity_samples: 32, docsim_reference: 256, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub limit: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { limit: 16 }
    }
}

/// One document with a section per stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub corpus: CorpusConfig,
    pub codec: CodecConfig,
    pub diffusion: DiffusionConfig,
    pub synth: SynthConfig,
    pub rewards: RewardSection,
    pub sft: SftConfig,
    pub rlhf: RlhfConfig,
    pub eval: EvalConfig,
    pub render: RenderConfig,
}

impl PipelineConfig {
    /// Minutes-scale settings for smoke runs.
    pub fn smoke() -> Self {
        let mut c = Self::default();
        c.corpus.n_layouts = 300;
        c.codec.steps = 300;
        c.codec.optim.decay_steps = 300;
        c.diffusion.arch = BackboneArch { width: 32, layers: 2, ..BackboneArch::default() };
        c.diffusion.steps = 200;
        c.diffusion.optim.decay_steps = 200;
        c.synth.n_sequences = 120;
        c.synth.n_logged = 24;
        for r in c.rewards.variants_mut() {
            r.arch = BackboneArch { width: 32, layers: 1, ..r.arch.clone() };
            r.pretrain.steps = 60;
            r.pretrain.optim = AdamConfig { warmup_steps: 10, decay_steps: 60, ..r.pretrain.optim.clone() };
            r.finetune.steps = 10;
        }
        c.rewards.holdout_every = 4;
        c.sft.steps = 40;
        c.rlhf.iterations = 2;
        c.rlhf.ddpo.n_rollouts = 16;
        c.rlhf.ddpo.minibatch = 16;
        c.rlhf.diversity_samples = 8;
        c.rlhf.eval_samples = 16;
        c.eval.n_samples = 32;
        c.eval.diversity_samples = 8;
        c.eval.docsim_reference = 32;
        c.render.limit = 4;
        c
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_slice(&bytes).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.synth.perturb.validate()?;
        self.rlhf.ddpo.validate(self.diffusion.schedule.steps)?;
        for v in RewardVariant::ALL {
            if self.rewards.variant(v).variant != v {
                return Err(Error::Config(format!("rewards.{} declares variant `{}`", v.name(), self.rewards.variant(v).variant.name())));
            }
        }
        if self.eval.n_samples == 0 || self.eval.diversity_samples < 2 || self.eval.docsim_reference == 0 {
            return Err(Error::Config("eval needs samples, at least two diversity samples and a DocSim reference".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_documents_fill_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"diffusion": {"steps": 7}}"#).unwrap();
        assert_eq!(c.diffusion.steps, 7);
        assert_eq!(c.diffusion.batch_size, DiffusionConfig::default().batch_size);
        assert_eq!(c.rlhf, RlhfConfig::default());
    }

    #[test]
    fn json_round_trip() {
        for c in [PipelineConfig::default(), PipelineConfig::smoke()] {
            c.validate().unwrap();
            let back: PipelineConfig = serde_json::from_str(&c.to_json_pretty()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn mislabelled_reward_section_is_rejected() {
        let mut c = PipelineConfig::default();
        c.rewards.keystroke.variant = RewardVariant::Chamfer;
        assert!(c.validate().is_err());
    }
}
