//! Transformer over latent tokens with optional time and prompt conditioning.
//! Shared by the denoiser and the reward models.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::layout::M_MAX;
use crate::nn::{sinusoidal_embedding, Graph, LayerNorm, Linear, Mat, ParamId, ParamStore, Segments, Transformer, TransformerConfig, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneArch {
    pub latent_dim: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Prompt vocabulary size; row `n_prompts` of each table is the null prompt.
    pub n_prompts: usize,
    /// Cross-attention context tokens per prompt.
    pub ctx_tokens: usize,
    pub max_len: usize,
    pub time_embedding: bool,
    pub conditional: bool,
}

impl Default for BackboneArch {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            width: 64,
            layers: 4,
            heads: 4,
            mlp_ratio: 2,
            n_prompts: 8,
            ctx_tokens: 4,
            max_len: M_MAX,
            time_embedding: true,
            conditional: true,
        }
    }
}

impl BackboneArch {
    pub fn null_prompt(&self) -> usize {
        self.n_prompts
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    arch: BackboneArch,
    input: Linear,
    pos: ParamId,
    time: Option<(Linear, Linear)>,
    prompt: Option<ParamId>,
    ctx: Option<ParamId>,
    transformer: Transformer,
    ln_out: LayerNorm,
}

impl Backbone {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, arch: &BackboneArch, rng: &mut R) -> Self {
        let w = arch.width;
        let input = Linear::new(store, &format!("{name}.input"), arch.latent_dim, w, 1.0, rng);
        let pos = store.add(format!("{name}.pos"), Mat::randn(arch.max_len, w, 0.02, rng));
        let time = arch
            .time_embedding
            .then(|| (Linear::new(store, &format!("{name}.time.0"), w, w, 1.0, rng), Linear::new(store, &format!("{name}.time.1"), w, w, 1.0, rng)));
        let rows = arch.n_prompts + 1;
        let prompt = arch.conditional.then(|| store.add(format!("{name}.prompt"), Mat::randn(rows, w, 0.5, rng)));
        let ctx = arch.conditional.then(|| store.add(format!("{name}.ctx"), Mat::randn(rows * arch.ctx_tokens, w, 0.5, rng)));
        let tcfg = TransformerConfig { width: w, layers: arch.layers, heads: arch.heads, mlp_ratio: arch.mlp_ratio, cross_attention: arch.conditional };
        let transformer = Transformer::new(store, &format!("{name}.blocks"), &tcfg, rng);
        let ln_out = LayerNorm::new(store, &format!("{name}.ln_out"), w);
        Self { arch: arch.clone(), input, pos, time, prompt, ctx, transformer, ln_out }
    }

    pub fn arch(&self) -> &BackboneArch {
        &self.arch
    }

    /// Hidden states for stacked tokens `z`. `t` and `cond` hold one entry
    /// per segment and are ignored when the matching feature is disabled.
    pub fn forward(&self, g: &mut Graph, z: Var, seg: &Rc<Segments>, t: &[usize], cond: &[usize]) -> Var {
        let w = self.arch.width;
        let owner = Rc::new(seg.row_owner());
        let position = Rc::new(seg.row_position());
        assert!(position.iter().all(|&p| p < self.arch.max_len), "sequence longer than max_len");
        let mut h = self.input.forward(g, z);
        let pos_table = g.param(self.pos);
        let pos = g.gather_rows(pos_table, position);
        h = g.add(h, pos);

        if let Some((l0, l1)) = &self.time {
            assert_eq!(t.len(), seg.len(), "one timestep per sequence");
            let rows: Vec<Vec<f64>> = t.iter().map(|&ti| sinusoidal_embedding(ti as f64, w)).collect();
            let te = g.constant(Mat::from_rows(&rows));
            let te = l0.forward(g, te);
            let te = g.silu(te);
            let te = l1.forward(g, te);
            let te = g.gather_rows(te, owner.clone());
            h = g.add(h, te);
        }

        let mut context = None;
        if let (Some(prompt), Some(ctx)) = (self.prompt, self.ctx) {
            assert_eq!(cond.len(), seg.len(), "one condition per sequence");
            assert!(cond.iter().all(|&c| c <= self.arch.n_prompts), "prompt index out of range");
            let table = g.param(prompt);
            let per_row: Vec<usize> = owner.iter().map(|&o| cond[o]).collect();
            let pe = g.gather_rows(table, Rc::new(per_row));
            h = g.add(h, pe);
            let k = self.arch.ctx_tokens;
            let ctx_idx: Vec<usize> = cond.iter().flat_map(|&c| (0..k).map(move |j| c * k + j)).collect();
            let ctx_table = g.param(ctx);
            let cv = g.gather_rows(ctx_table, Rc::new(ctx_idx));
            context = Some((cv, Rc::new(Segments::from_lengths(&vec![k; cond.len()]))));
        }
        let h = self.transformer.forward(g, h, seg, context.as_ref().map(|(v, s)| (*v, s)));
        self.ln_out.forward(g, h)
    }
}
