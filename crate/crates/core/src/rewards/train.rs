use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{LabeledLatent, LatentPair, RewardData};
use super::model::{RewardModel, RewardSpec, RewardVariant};
use super::normalize::fit_normalizer;
use crate::diffusion::BackboneArch;
use crate::error::{Error, Result};
use crate::metrics::spearman;
use crate::nn::{Adam, AdamConfig, DivergenceGuard, Graph, Mat, Segments};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optim: AdamConfig,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 64, optim: AdamConfig { lr: 1e-3, warmup_steps: 100, decay_steps: 2000, final_lr_frac: 0.1, ..AdamConfig::default() } }
    }
}

/// Architecture plus the two training phases of one reward variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub variant: RewardVariant,
    pub arch: BackboneArch,
    pub pretrain: PhaseConfig,
    pub finetune: PhaseConfig,
}

impl RewardConfig {
    /// Step budgets per variant; preference batches count pairs, so they
    /// hold half as many pairs to score the same number of layouts.
    pub fn for_variant(variant: RewardVariant) -> Self {
        let (fine_steps, batch_size) = match variant {
            RewardVariant::Chamfer => (400, 64),
            RewardVariant::Keystroke => (200, 64),
            RewardVariant::Preference => (100, 32),
        };
        let pretrain = PhaseConfig { batch_size, ..PhaseConfig::default() };
        let finetune = PhaseConfig { steps: fine_steps, batch_size, optim: AdamConfig { lr: 2e-4, ..AdamConfig::default() } };
        Self { variant, arch: variant.default_arch(), pretrain, finetune }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub name: String,
    pub steps: usize,
    pub examples: usize,
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub phases: Vec<PhaseReport>,
}

impl RewardReport {
    pub fn all_losses(&self) -> Vec<f64> {
        self.phases.iter().flat_map(|p| p.losses.iter().copied()).collect()
    }
}

fn fresh_model(variant: RewardVariant, arch: &BackboneArch, prompts: &[String], rng: &mut ChaCha8Rng) -> Result<RewardModel> {
    let latent_dim = arch.latent_dim;
    RewardModel::new(RewardSpec::new(variant, BackboneArch { latent_dim, ..arch.clone() }, prompts.to_vec()), rng)
}

fn regression_targets(model: &RewardModel, data: &[LabeledLatent]) -> Result<Vec<f64>> {
    let n = model.normalizer().ok_or_else(|| Error::Config("regression model has no normalizer".into()))?;
    Ok(data.iter().map(|d| n.apply(d.target)).collect())
}

/// Runs one training phase on `data` and returns its per-step losses.
pub(crate) fn fit_phase(model: &mut RewardModel, data: RewardData, cfg: &PhaseConfig, seed: u64) -> Result<Vec<f64>> {
    if cfg.steps == 0 {
        return Ok(Vec::new());
    }
    if data.is_empty() {
        return Err(Error::Empty("no reward training examples".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    match (model.variant().is_regression(), &data) {
        (true, RewardData::Regression(_)) | (false, RewardData::Preference(_)) => {}
        _ => return Err(Error::Config(format!("{} model given the wrong kind of data", model.variant().name()))),
    }
    let targets = match data {
        RewardData::Regression(d) => regression_targets(model, d)?,
        RewardData::Preference(_) => Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::new(model.store(), cfg.optim.clone());
    let mut guard = DivergenceGuard::new(model.store(), 100);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let picks: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..data.len())).collect();
        let (loss, grads) = {
            let mut g = Graph::new(model.store());
            let loss = match data {
                RewardData::Regression(d) => {
                    let zs: Vec<&Mat> = picks.iter().map(|&i| &d[i].z).collect();
                    let conds: Vec<usize> = picks.iter().map(|&i| d[i].cond).collect();
                    let y = Mat::from_vec(picks.len(), 1, picks.iter().map(|&i| targets[i]).collect());
                    let seg = Rc::new(Segments::from_lengths(&zs.iter().map(|z| z.rows()).collect::<Vec<_>>()));
                    let zv = g.constant(Mat::vstack(&zs));
                    let pred = model.predict_graph(&mut g, zv, &seg, &conds);
                    let yv = g.constant(y);
                    let diff = g.sub(pred, yv);
                    let sq = g.square(diff);
                    g.mean(sq)
                }
                RewardData::Preference(d) => {
                    let mut zs: Vec<&Mat> = picks.iter().map(|&i| &d[i].preferred).collect();
                    zs.extend(picks.iter().map(|&i| &d[i].rejected));
                    let mut conds: Vec<usize> = picks.iter().map(|&i| d[i].cond).collect();
                    conds.extend_from_within(..);
                    let seg = Rc::new(Segments::from_lengths(&zs.iter().map(|z| z.rows()).collect::<Vec<_>>()));
                    let zv = g.constant(Mat::vstack(&zs));
                    let pred = model.predict_graph(&mut g, zv, &seg, &conds);
                    let n = picks.len();
                    let good = g.slice_rows(pred, 0, n);
                    let bad = g.slice_rows(pred, n, n);
                    let margin = g.sub(bad, good);
                    let l = g.softplus(margin);
                    g.mean(l)
                }
            };
            (g.value(loss).item(), g.backward(loss))
        };
        guard.check(step, loss, &grads, model.store())?;
        opt.step(model.store_mut(), &grads);
        losses.push(loss);
    }
    Ok(losses)
}

/// Effort regression with targets standardised by a normalizer fitted on
/// `data`.
pub fn train_rare_regression(
    variant: RewardVariant,
    arch: &BackboneArch,
    prompts: &[String],
    data: &[LabeledLatent],
    cfg: &PhaseConfig,
    seed: u64,
) -> Result<(RewardModel, RewardReport)> {
    let transform = variant.target_transform().ok_or_else(|| Error::Config("use train_preference for the preference variant".into()))?;
    if data.is_empty() {
        return Err(Error::Empty("no labelled latents".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = fresh_model(variant, arch, prompts, &mut rng)?;
    model.set_normalizer(fit_normalizer(&data.iter().map(|d| d.target).collect::<Vec<_>>(), transform)?);
    let losses = fit_phase(&mut model, RewardData::Regression(data), cfg, rng.random())?;
    let report = RewardReport { phases: vec![PhaseReport { name: "train".into(), steps: cfg.steps, examples: data.len(), losses }] };
    Ok((model, report))
}

/// Pairwise logistic loss `-log σ(r(preferred) - r(rejected))`.
pub fn train_preference(arch: &BackboneArch, prompts: &[String], pairs: &[LatentPair], cfg: &PhaseConfig, seed: u64) -> Result<(RewardModel, RewardReport)> {
    if pairs.is_empty() {
        return Err(Error::Empty("no preference pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = fresh_model(RewardVariant::Preference, arch, prompts, &mut rng)?;
    let losses = fit_phase(&mut model, RewardData::Preference(pairs), cfg, rng.random())?;
    let report = RewardReport { phases: vec![PhaseReport { name: "train".into(), steps: cfg.steps, examples: pairs.len(), losses }] };
    Ok((model, report))
}

/// Pretrains on procedurally generated data, then finetunes on logged-style
/// data. The normalizer is fitted on the synthetic targets and frozen.
pub fn pretrain_then_finetune(
    cfg: &RewardConfig,
    prompts: &[String],
    synthetic: RewardData,
    logged: RewardData,
    seed: u64,
) -> Result<(RewardModel, RewardReport)> {
    if synthetic.is_empty() {
        return Err(Error::Empty("synthetic pretraining set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = fresh_model(cfg.variant, &cfg.arch, prompts, &mut rng)?;
    if let (Some(tr), RewardData::Regression(d)) = (cfg.variant.target_transform(), synthetic) {
        model.set_normalizer(fit_normalizer(&d.iter().map(|x| x.target).collect::<Vec<_>>(), tr)?);
    }
    let pre_seed: u64 = rng.random();
    let fine_seed: u64 = rng.random();
    let pre = fit_phase(&mut model, synthetic, &cfg.pretrain, pre_seed)?;
    let fine_steps = if logged.is_empty() { 0 } else { cfg.finetune.steps };
    let fine = fit_phase(&mut model, logged, &PhaseConfig { steps: fine_steps, ..cfg.finetune.clone() }, fine_seed)?;
    let report = RewardReport {
        phases: vec![
            PhaseReport { name: "pretrain".into(), steps: cfg.pretrain.steps, examples: synthetic.len(), losses: pre },
            PhaseReport { name: "finetune".into(), steps: fine_steps, examples: logged.len(), losses: fine },
        ],
    };
    Ok((model, report))
}

/// Held-out quality of a regression model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionEval {
    /// Rank correlation between `-score` and the raw effort target.
    pub spearman: f64,
    /// MSE in normalized target units.
    pub mse: f64,
}

pub fn evaluate_regression(model: &RewardModel, data: &[LabeledLatent]) -> Result<RegressionEval> {
    if data.is_empty() {
        return Err(Error::Empty("no evaluation examples".into()));
    }
    let zs: Vec<&Mat> = data.iter().map(|d| &d.z).collect();
    let conds: Vec<usize> = data.iter().map(|d| d.cond).collect();
    let pred = model.predict(&zs, &conds);
    let effort: Vec<f64> = model.score_batch(&zs, &conds).into_iter().map(|s| -s).collect();
    let raw: Vec<f64> = data.iter().map(|d| d.target).collect();
    let targets = regression_targets(model, data)?;
    let mse = pred.iter().zip(&targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / data.len() as f64;
    Ok(RegressionEval { spearman: spearman(&effort, &raw), mse })
}

/// Fraction of pairs where the preferred layout scores strictly higher.
pub fn pairwise_accuracy<'a>(model: &RewardModel, pairs: impl IntoIterator<Item = &'a LatentPair>) -> f64 {
    let pairs: Vec<&LatentPair> = pairs.into_iter().collect();
    if pairs.is_empty() {
        return f64::NAN;
    }
    let good: Vec<&Mat> = pairs.iter().map(|p| &p.preferred).collect();
    let bad: Vec<&Mat> = pairs.iter().map(|p| &p.rejected).collect();
    let conds: Vec<usize> = pairs.iter().map(|p| p.cond).collect();
    let sg = model.score_batch(&good, &conds);
    let sb = model.score_batch(&bad, &conds);
    sg.iter().zip(&sb).filter(|(a, b)| a > b).count() as f64 / pairs.len() as f64
}

/// Splits examples by group so that no source sequence straddles the split.
pub fn split_by_group<T: Clone>(items: &[T], group: impl Fn(&T) -> usize, holdout_every: usize) -> (Vec<T>, Vec<T>) {
    items.iter().cloned().partition(|x| holdout_every == 0 || group(x) % holdout_every != 0)
}
