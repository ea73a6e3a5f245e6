//! Reusable building blocks: linear layers, layer norm, pre-LN transformer
//! blocks with optional cross-attention.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::{Mat, Segments};

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, gain: f64, rng: &mut R) -> Self {
        let w = store.add_weight(format!("{name}.w"), fan_in, fan_out, gain, rng);
        let b = store.add(format!("{name}.b"), Mat::zeros(1, fan_out));
        Self { w, b }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w);
        g.add_bias(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Mat::filled(1, width, 1.0));
        let beta = store.add(format!("{name}.beta"), Mat::zeros(1, width));
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Adds a cross-attention sublayer over a per-sequence context.
    pub cross_attention: bool,
}

#[derive(Clone, Debug)]
struct Attn {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

impl Attn {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, width: usize, rng: &mut R) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), width, width, 1.0, rng),
            k: Linear::new(store, &format!("{name}.k"), width, width, 1.0, rng),
            v: Linear::new(store, &format!("{name}.v"), width, width, 1.0, rng),
            out: Linear::new(store, &format!("{name}.out"), width, width, 0.5, rng),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn forward(&self, g: &mut Graph, x: Var, kv: Var, heads: usize, q_seg: &Rc<Segments>, kv_seg: &Rc<Segments>) -> Var {
        let q = self.q.forward(g, x);
        let k = self.k.forward(g, kv);
        let v = self.v.forward(g, kv);
        let a = g.attention(q, k, v, heads, q_seg.clone(), kv_seg.clone());
        self.out.forward(g, a)
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln_self: LayerNorm,
    self_attn: Attn,
    cross: Option<(LayerNorm, Attn)>,
    ln_mlp: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct Transformer {
    cfg: TransformerConfig,
    blocks: Vec<Block>,
}

impl Transformer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &TransformerConfig, rng: &mut R) -> Self {
        assert!(cfg.heads > 0 && cfg.width % cfg.heads == 0, "width must be divisible by heads");
        let w = cfg.width;
        let blocks = (0..cfg.layers)
            .map(|l| {
                let p = format!("{name}.{l}");
                Block {
                    ln_self: LayerNorm::new(store, &format!("{p}.ln_self"), w),
                    self_attn: Attn::new(store, &format!("{p}.self"), w, rng),
                    cross: cfg.cross_attention.then(|| (LayerNorm::new(store, &format!("{p}.ln_cross"), w), Attn::new(store, &format!("{p}.cross"), w, rng))),
                    ln_mlp: LayerNorm::new(store, &format!("{p}.ln_mlp"), w),
                    fc1: Linear::new(store, &format!("{p}.fc1"), w, w * cfg.mlp_ratio, 1.0, rng),
                    fc2: Linear::new(store, &format!("{p}.fc2"), w * cfg.mlp_ratio, w, 0.5, rng),
                }
            })
            .collect();
        Self { cfg: cfg.clone(), blocks }
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.cfg
    }

    /// Runs all blocks over stacked token rows `x`. `context` supplies the
    /// cross-attention keys/values and their segments when enabled.
    pub fn forward(&self, g: &mut Graph, mut x: Var, seg: &Rc<Segments>, context: Option<(Var, &Rc<Segments>)>) -> Var {
        let heads = self.cfg.heads;
        for b in &self.blocks {
            let h = b.ln_self.forward(g, x);
            let a = b.self_attn.forward(g, h, h, heads, seg, seg);
            x = g.add(x, a);
            if let (Some((ln, attn)), Some((ctx, ctx_seg))) = (&b.cross, context) {
                let h = ln.forward(g, x);
                let a = attn.forward(g, h, ctx, heads, seg, ctx_seg);
                x = g.add(x, a);
            }
            let h = b.ln_mlp.forward(g, x);
            let h = b.fc1.forward(g, h);
            let h = g.silu(h);
            let h = b.fc2.forward(g, h);
            x = g.add(x, h);
        }
        x
    }
}

/// Sinusoidal features of a scalar position, `width` columns.
pub fn sinusoidal_embedding(position: f64, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut out = vec![0.0; width];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        out[i] = (position * freq).sin();
        out[half + i] = (position * freq).cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn transformer_preserves_shape_and_isolates_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let cfg = TransformerConfig { width: 8, layers: 2, heads: 2, mlp_ratio: 2, cross_attention: false };
        let t = Transformer::new(&mut store, "t", &cfg, &mut rng);
        let x = Mat::randn(5, 8, 1.0, &mut rng);
        let seg = Rc::new(Segments::from_lengths(&[2, 3]));
        let run = |x: Mat| {
            let mut g = Graph::new(&store);
            let xv = g.constant(x);
            let y = t.forward(&mut g, xv, &seg, None);
            g.value(y).clone()
        };
        let y = run(x.clone());
        assert_eq!(y.shape(), (5, 8));
        // Changing the second sequence leaves the first one untouched.
        let mut x2 = x.clone();
        x2.row_mut(4)[0] += 1.0;
        let y2 = run(x2);
        assert_eq!(y.slice_rows(0, 2), y2.slice_rows(0, 2));
        assert_ne!(y.slice_rows(2, 3), y2.slice_rows(2, 3));
    }
}
