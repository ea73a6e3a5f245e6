//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rare_core::codec::{Codec, CodecArch};
use rare_core::diffusion::{BackboneArch, DiffusionModel, DiffusionSpec, ScheduleConfig};
use rare_core::layout::{gen_corpus, CorpusConfig, Layout};
use rare_core::rewards::{RewardModel, RewardSpec, RewardVariant};

pub fn layouts(n: usize, seed: u64) -> Vec<Layout> {
    gen_corpus(&CorpusConfig { n_layouts: n, ..CorpusConfig::default() }, seed).expect("corpus").layouts
}

pub fn prompts() -> Vec<String> {
    vec!["login".into(), "list".into()]
}

/// Untrained codec; timing does not depend on the weights.
pub fn codec() -> Codec {
    Codec::new(&CodecArch::default(), &mut ChaCha8Rng::seed_from_u64(0))
}

pub fn denoiser(width: usize, layers: usize) -> DiffusionModel {
    let arch = BackboneArch { width, layers, n_prompts: prompts().len(), ..BackboneArch::default() };
    DiffusionModel::new(DiffusionSpec::new(arch, ScheduleConfig::default(), prompts()), &mut ChaCha8Rng::seed_from_u64(1)).expect("denoiser")
}

pub fn reward_model() -> RewardModel {
    let arch = BackboneArch { n_prompts: prompts().len(), ..RewardVariant::Chamfer.default_arch() };
    RewardModel::new(RewardSpec::new(RewardVariant::Chamfer, arch, prompts()), &mut ChaCha8Rng::seed_from_u64(2)).expect("reward model")
}
