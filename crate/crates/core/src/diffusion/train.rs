use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::BackboneArch;
use super::loss::{ddpm_loss, make_noised_batch, LossWeighting};
use super::model::{DiffusionModel, DiffusionSpec};
use super::schedule::ScheduleConfig;
use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::layout::{Corpus, Layout};
use crate::nn::{Adam, AdamConfig, DivergenceGuard, Graph, Mat};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub arch: BackboneArch,
    pub schedule: ScheduleConfig,
    pub steps: usize,
    /// Layouts per minibatch.
    pub batch_size: usize,
    pub optim: AdamConfig,
    pub p_uncond: f64,
    pub weighting: LossWeighting,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            arch: BackboneArch::default(),
            schedule: ScheduleConfig::default(),
            steps: 3000,
            batch_size: 64,
            optim: AdamConfig { lr: 1e-3, warmup_steps: 100, decay_steps: 3000, final_lr_frac: 0.1, ..AdamConfig::default() },
            p_uncond: 0.1,
            weighting: LossWeighting::Constant,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optim: AdamConfig,
    pub p_uncond: f64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self { steps: 1000, batch_size: 64, optim: AdamConfig::with_lr(2e-4), p_uncond: 0.1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiffusionReport {
    pub losses: Vec<f64>,
}

/// Encoded training examples: tokens plus prompt index.
pub fn encode_examples(model_spec: &DiffusionSpec, codec: &Codec, layouts: &[Layout]) -> Result<Vec<(Mat, usize)>> {
    let tokens = codec.encode_batch(layouts)?;
    layouts
        .iter()
        .zip(tokens)
        .map(|(l, z)| {
            let c = model_spec
                .prompt_index(l.prompt_id.as_deref())
                .ok_or_else(|| Error::Config(format!("prompt `{}` unknown to the model", l.prompt_id.as_deref().unwrap_or(""))))?;
            Ok((z, c))
        })
        .collect()
}

/// Runs `steps` denoising-loss updates on `data`; returns the per-step losses.
pub fn fit_denoiser(
    model: &mut DiffusionModel,
    data: &[(Mat, usize)],
    steps: usize,
    batch_size: usize,
    optim: &AdamConfig,
    p_uncond: f64,
    weighting: LossWeighting,
    seed: u64,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Empty("no training examples".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::new(model.store(), optim.clone());
    let mut guard = DivergenceGuard::new(model.store(), 100);
    let null = model.null_prompt();
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let picks: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..data.len())).collect();
        let z0s: Vec<&Mat> = picks.iter().map(|&i| &data[i].0).collect();
        let conds: Vec<usize> = picks.iter().map(|&i| data[i].1).collect();
        let batch = make_noised_batch(model.schedule(), &z0s, &conds, null, p_uncond, &mut rng);
        let (loss, grads) = {
            let mut g = Graph::new(model.store());
            let loss = ddpm_loss(&mut g, model, &batch, weighting);
            (g.value(loss).item(), g.backward(loss))
        };
        guard.check(step, loss, &grads, model.store())?;
        opt.step(model.store_mut(), &grads);
        losses.push(loss);
    }
    Ok(losses)
}

pub fn train_diffusion(codec: &Codec, corpus: &Corpus, cfg: &DiffusionConfig, seed: u64) -> Result<(DiffusionModel, DiffusionReport)> {
    if corpus.layouts.is_empty() {
        return Err(Error::Empty("corpus has no layouts".into()));
    }
    let arch = BackboneArch { latent_dim: codec.latent_dim(), ..cfg.arch.clone() };
    let mut spec = DiffusionSpec::new(arch, cfg.schedule.clone(), corpus.prompt_ids());
    spec.observe_counts(&corpus.layouts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = DiffusionModel::new(spec, &mut rng)?;
    let data = encode_examples(model.spec(), codec, &corpus.layouts)?;
    let losses = fit_denoiser(&mut model, &data, cfg.steps, cfg.batch_size, &cfg.optim, cfg.p_uncond, cfg.weighting, rng.random())?;
    Ok((model, DiffusionReport { losses }))
}

/// Continues denoising training on final revisions only.
pub fn sft_finetune(model: &DiffusionModel, codec: &Codec, finals: &[Layout], cfg: &SftConfig, seed: u64) -> Result<(DiffusionModel, DiffusionReport)> {
    if finals.is_empty() {
        return Err(Error::Empty("supervised finetuning needs final layouts".into()));
    }
    let mut tuned = model.clone();
    let data = encode_examples(tuned.spec(), codec, finals)?;
    let losses = fit_denoiser(&mut tuned, &data, cfg.steps, cfg.batch_size, &cfg.optim, cfg.p_uncond, LossWeighting::Constant, seed)?;
    Ok((tuned, DiffusionReport { losses }))
}

/// Mean denoising loss over `data` with a fixed noise draw, for diagnostics.
pub fn eval_denoiser_loss(model: &DiffusionModel, data: &[(Mat, usize)], seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("no evaluation examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in data.chunks(128) {
        let z0s: Vec<&Mat> = chunk.iter().map(|(z, _)| z).collect();
        let conds: Vec<usize> = chunk.iter().map(|(_, c)| *c).collect();
        let batch = make_noised_batch(model.schedule(), &z0s, &conds, model.null_prompt(), 0.0, &mut rng);
        let mut g = Graph::new(model.store());
        let loss = ddpm_loss(&mut g, model, &batch, LossWeighting::Constant);
        total += g.value(loss).item() * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}
