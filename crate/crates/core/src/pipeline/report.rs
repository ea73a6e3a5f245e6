use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::EvalConfig;
use crate::codec::Codec;
use crate::diffusion::{sample_batch, DiffusionModel, SampleConfig};
use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::metrics::{docsim, fid_from_features, mean, mean_pairwise_chamfer};
use crate::rewards::RewardModel;
use crate::rlhf::score_layouts;

/// A generator to evaluate, with the codec hash it was trained against.
pub struct Method<'a> {
    pub name: String,
    pub model: &'a DiffusionModel,
    pub codec_hash: String,
}

pub struct Judge<'a> {
    pub name: String,
    pub model: &'a RewardModel,
    pub codec_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub n_samples: usize,
    pub fid: f64,
    pub docsim: f64,
    /// Mean score of the method's samples under each reward model.
    pub rewards: BTreeMap<String, f64>,
    pub diversity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub codec_hash: String,
    pub reference_size: usize,
    pub seed: u64,
    pub guidance: f64,
    pub reward_models: Vec<String>,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn row(&self, method: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "reference layouts: {}  codec: {}  seed: {}  guidance: {}",
            self.reference_size,
            &self.codec_hash[..12.min(self.codec_hash.len())],
            self.seed,
            self.guidance
        );
        let mut header = format!("{:<18} {:>6} {:>10} {:>8} {:>10}", "method", "n", "FID", "DocSim", "diversity");
        for r in &self.reward_models {
            let _ = write!(header, " {:>12}", format!("r[{r}]"));
        }
        let _ = writeln!(out, "{header}");
        let _ = writeln!(out, "{}", "-".repeat(header.len()));
        for row in &self.rows {
            let _ = write!(out, "{:<18} {:>6} {:>10.5} {:>8.4} {:>10.4}", row.method, row.n_samples, row.fid, row.docsim, row.diversity);
            for r in &self.reward_models {
                let _ = write!(out, " {:>12.4}", row.rewards.get(r).copied().unwrap_or(f64::NAN));
            }
            let _ = writeln!(out);
        }
        out
    }
}

fn reward_conds(judge: &RewardModel, layouts: &[Layout]) -> Result<Vec<usize>> {
    layouts
        .iter()
        .map(|l| {
            judge
                .prompt_index(l.prompt_id.as_deref())
                .ok_or_else(|| Error::Config(format!("reward model does not know prompt `{}`", l.prompt_id.as_deref().unwrap_or(""))))
        })
        .collect()
}

/// Metrics of one layout set against the reference.
fn score_set(
    name: &str,
    layouts: &[Layout],
    codec: &Codec,
    reference_features: &[Vec<f64>],
    reference: &[Layout],
    judges: &[Judge],
    cfg: &EvalConfig,
) -> Result<EvalRow> {
    let fid = fid_from_features(&codec.layout_features(layouts)?, reference_features)?;
    let refs = &reference[..cfg.docsim_reference.min(reference.len())];
    let mut sims = Vec::with_capacity(layouts.len() * refs.len());
    for a in layouts {
        for b in refs {
            sims.push(docsim(a, b)?);
        }
    }
    let mut rewards = BTreeMap::new();
    for j in judges {
        let conds = reward_conds(j.model, layouts)?;
        rewards.insert(j.name.clone(), mean(&score_layouts(codec, j.model, layouts, &conds)?));
    }
    let k = cfg.diversity_samples.min(layouts.len());
    Ok(EvalRow { method: name.into(), n_samples: layouts.len(), fid, docsim: mean(&sims), rewards, diversity: mean_pairwise_chamfer(&layouts[..k])? })
}

/// Samples every method with the same seed schedule and scores all of them
/// against one reference set through one codec. The first row is the
/// reference set itself. Returns the report and each method's samples.
pub fn eval_report(
    codec: &Codec,
    methods: &[Method],
    judges: &[Judge],
    reference: &[Layout],
    cfg: &EvalConfig,
) -> Result<(EvalReport, Vec<(String, Vec<Layout>)>)> {
    if reference.len() < 2 {
        return Err(Error::Empty("reference set needs at least two layouts".into()));
    }
    let codec_hash = codec.content_hash();
    for (what, name, h) in methods.iter().map(|m| ("method", &m.name, &m.codec_hash)).chain(judges.iter().map(|j| ("reward model", &j.name, &j.codec_hash))) {
        if *h != codec_hash {
            return Err(Error::Config(format!(
                "{what} `{name}` was trained with codec {} but the report uses {}; features would be incomparable",
                &h[..12.min(h.len())],
                &codec_hash[..12]
            )));
        }
    }
    let reference_features = codec.layout_features(reference)?;
    let mut rows = vec![score_set("reference", reference, codec, &reference_features, reference, judges, cfg)?];
    let mut samples = Vec::new();
    for m in methods {
        let n_prompts = m.model.spec().prompts.len().max(1);
        let conds: Vec<usize> = (0..cfg.n_samples).map(|i| i % n_prompts).collect();
        let trajs = sample_batch(m.model, codec, &conds, None, &SampleConfig { guidance: cfg.guidance, seed: cfg.seed, record: false })?;
        let layouts: Vec<Layout> = trajs.into_iter().map(|t| t.layout).collect();
        rows.push(score_set(&m.name, &layouts, codec, &reference_features, reference, judges, cfg)?);
        samples.push((m.name.clone(), layouts));
    }
    let report = EvalReport {
        codec_hash,
        reference_size: reference.len(),
        seed: cfg.seed,
        guidance: cfg.guidance,
        reward_models: judges.iter().map(|j| j.name.clone()).collect(),
        rows,
    };
    Ok((report, samples))
}
