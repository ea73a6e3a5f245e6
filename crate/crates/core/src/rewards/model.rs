use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::normalize::{Normalizer, TargetTransform};
use crate::diffusion::{Backbone, BackboneArch};
use crate::error::{Error, Result};
use crate::nn::{Graph, Linear, Mat, ParamStore, Segments, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardVariant {
    Chamfer,
    Keystroke,
    Preference,
}

impl RewardVariant {
    pub const ALL: [RewardVariant; 3] = [RewardVariant::Chamfer, RewardVariant::Keystroke, RewardVariant::Preference];

    pub fn name(self) -> &'static str {
        match self {
            RewardVariant::Chamfer => "chamfer",
            RewardVariant::Keystroke => "keystroke",
            RewardVariant::Preference => "preference",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| Error::parse("variant", format!("unknown reward variant `{s}`")))
    }

    /// Regression variants predict an effort; the preference variant a score.
    pub fn is_regression(self) -> bool {
        self != RewardVariant::Preference
    }

    pub fn target_transform(self) -> Option<TargetTransform> {
        match self {
            RewardVariant::Chamfer => Some(TargetTransform::Identity),
            RewardVariant::Keystroke => Some(TargetTransform::Log1p),
            RewardVariant::Preference => None,
        }
    }

    /// Desk-scale default backbone: the denoiser's width with two blocks.
    pub fn default_arch(self) -> BackboneArch {
        BackboneArch { layers: 2, time_embedding: false, ..BackboneArch::default() }
    }
}

/// Everything besides the weights needed to rebuild a reward model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub variant: RewardVariant,
    pub arch: BackboneArch,
    pub prompts: Vec<String>,
    pub normalizer: Option<Normalizer>,
}

impl RewardSpec {
    pub fn new(variant: RewardVariant, arch: BackboneArch, prompts: Vec<String>) -> Self {
        let arch = BackboneArch { n_prompts: prompts.len(), time_embedding: false, ..arch };
        Self { variant, arch, prompts, normalizer: None }
    }

    pub fn null_prompt(&self) -> usize {
        self.arch.null_prompt()
    }
}

/// Transformer over latent tokens, mean-pooled into a scalar head.
#[derive(Clone, Debug)]
pub struct RewardModel {
    spec: RewardSpec,
    store: ParamStore,
    backbone: Backbone,
    head: Linear,
    out: Linear,
}

impl RewardModel {
    pub fn new<R: Rng + ?Sized>(spec: RewardSpec, rng: &mut R) -> Result<Self> {
        if spec.arch.time_embedding {
            return Err(Error::Config("reward models take no timestep".into()));
        }
        if spec.arch.n_prompts != spec.prompts.len() {
            return Err(Error::Config("prompt table size mismatch".into()));
        }
        if !spec.variant.is_regression() && spec.normalizer.is_some() {
            return Err(Error::Config("preference models carry no normalizer".into()));
        }
        let w = spec.arch.width;
        let mut store = ParamStore::new();
        let backbone = Backbone::new(&mut store, "rew", &spec.arch, rng);
        let head = Linear::new(&mut store, "rew.head", w, w, 1.0, rng);
        let out = Linear::new(&mut store, "rew.out", w, 1, 0.1, rng);
        Ok(Self { spec, store, backbone, head, out })
    }

    pub fn from_store(spec: RewardSpec, store: &ParamStore) -> Result<Self> {
        let mut m = Self::new(spec, &mut ChaCha8Rng::seed_from_u64(0))?;
        m.store.load_from(store)?;
        Ok(m)
    }

    pub fn spec(&self) -> &RewardSpec {
        &self.spec
    }

    pub fn variant(&self) -> RewardVariant {
        self.spec.variant
    }

    pub fn normalizer(&self) -> Option<&Normalizer> {
        self.spec.normalizer.as_ref()
    }

    pub(crate) fn set_normalizer(&mut self, n: Normalizer) {
        self.spec.normalizer = Some(n);
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn content_hash(&self) -> String {
        self.store.content_hash()
    }

    pub fn null_prompt(&self) -> usize {
        self.spec.null_prompt()
    }

    pub fn prompt_index(&self, id: Option<&str>) -> Option<usize> {
        match id {
            None => Some(self.null_prompt()),
            Some(id) => self.spec.prompts.iter().position(|p| p == id),
        }
    }

    /// Raw head output (`n x 1`) for stacked sequences. For regression
    /// variants this is the predicted normalized effort.
    pub fn predict_graph(&self, g: &mut Graph, z: Var, seg: &Rc<Segments>, cond: &[usize]) -> Var {
        let h = self.backbone.forward(g, z, seg, &[], cond);
        let pooled = g.segment_mean(h, seg.clone());
        let h = self.head.forward(g, pooled);
        let h = g.silu(h);
        self.out.forward(g, h)
    }

    /// Raw outputs for a batch of token matrices.
    pub fn predict(&self, zs: &[&Mat], cond: &[usize]) -> Vec<f64> {
        assert_eq!(zs.len(), cond.len());
        let mut out = Vec::with_capacity(zs.len());
        for (chunk, c) in zs.chunks(256).zip(cond.chunks(256)) {
            let seg = Rc::new(Segments::from_lengths(&chunk.iter().map(|z| z.rows()).collect::<Vec<_>>()));
            let mut g = Graph::new(&self.store);
            let zv = g.constant(Mat::vstack(chunk));
            let p = self.predict_graph(&mut g, zv, &seg, c);
            out.extend_from_slice(g.value(p).data());
        }
        out
    }

    /// Reward: negated predicted effort for regression variants, the raw
    /// score for the preference variant.
    pub fn score_batch(&self, zs: &[&Mat], cond: &[usize]) -> Vec<f64> {
        let raw = self.predict(zs, cond);
        if self.spec.variant.is_regression() {
            raw.into_iter().map(|x| -x).collect()
        } else {
            raw
        }
    }

    pub fn score(&self, z: &Mat, cond: usize) -> f64 {
        self.score_batch(&[z], &[cond])[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: RewardVariant) -> RewardModel {
        let arch = BackboneArch { latent_dim: 3, width: 8, layers: 1, heads: 2, mlp_ratio: 1, ctx_tokens: 1, max_len: 6, ..variant.default_arch() };
        RewardModel::new(RewardSpec::new(variant, arch, vec!["p".into()]), &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn score_sign_follows_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = Mat::randn(4, 3, 1.0, &mut rng);
        let reg = tiny(RewardVariant::Chamfer);
        assert_eq!(reg.score(&z, 0), -reg.predict(&[&z], &[0])[0]);
        let pref = tiny(RewardVariant::Preference);
        assert_eq!(pref.score(&z, 0), pref.predict(&[&z], &[0])[0]);
    }

    #[test]
    fn scoring_is_deterministic_and_batch_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let zs: Vec<Mat> = (1..=5).map(|m| Mat::randn(m, 3, 1.0, &mut rng)).collect();
        let refs: Vec<&Mat> = zs.iter().collect();
        let m = tiny(RewardVariant::Keystroke);
        let all = m.score_batch(&refs, &[0, 1, 0, 1, 0]);
        assert_eq!(all, m.score_batch(&refs, &[0, 1, 0, 1, 0]));
        for (i, z) in zs.iter().enumerate() {
            let one = m.score(z, [0, 1, 0, 1, 0][i]);
            assert!((one - all[i]).abs() < 1e-12);
            assert!(one.is_finite());
        }
    }

    #[test]
    fn unconditional_models_ignore_the_prompt() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = Mat::randn(3, 3, 1.0, &mut rng);
        let arch =
            BackboneArch { latent_dim: 3, width: 8, layers: 1, heads: 2, mlp_ratio: 1, ctx_tokens: 1, max_len: 6, conditional: false, ..Default::default() };
        let m = RewardModel::new(RewardSpec::new(RewardVariant::Chamfer, arch, vec!["p".into()]), &mut rng).unwrap();
        assert_eq!(m.score(&z, 0), m.score(&z, 1));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in RewardVariant::ALL {
            assert_eq!(RewardVariant::parse(v.name()).unwrap(), v);
        }
        assert!(RewardVariant::parse("nope").is_err());
    }
}
