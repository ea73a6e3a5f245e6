//! Per-element latent autoencoder: each element (class, box) maps to one
//! `latent_dim` token and back.

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{BBox, Element, ElementClass, Layout, M_MAX};
use crate::nn::{Adam, AdamConfig, DivergenceGuard, Graph, Linear, Mat, ParamId, ParamStore, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecArch {
    pub n_classes: usize,
    pub latent_dim: usize,
    pub hidden: usize,
}

impl Default for CodecArch {
    fn default() -> Self {
        Self { n_classes: 10, latent_dim: 8, hidden: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub arch: CodecArch,
    pub steps: usize,
    /// Elements per minibatch.
    pub batch_size: usize,
    pub optim: AdamConfig,
    pub bbox_weight: f64,
    pub holdout_frac: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            arch: CodecArch::default(),
            steps: 3000,
            batch_size: 256,
            optim: AdamConfig { lr: 3e-3, warmup_steps: 100, decay_steps: 3000, final_lr_frac: 0.05, ..AdamConfig::default() },
            bbox_weight: 10.0,
            holdout_frac: 0.1,
        }
    }
}

/// `M_MAX` token slots plus occupancy; free slots hold zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSeq {
    pub tokens: Mat,
    pub mask: Vec<bool>,
}

impl LatentSeq {
    /// Packs `m x d` tokens into the first `m` slots.
    pub fn from_tokens(tokens: &Mat) -> Result<Self> {
        let (m, d) = tokens.shape();
        if m == 0 || m > M_MAX {
            return Err(Error::Config(format!("latent sequence length {m} outside 1..={M_MAX}")));
        }
        let mut full = Mat::zeros(M_MAX, d);
        full.data_mut()[..m * d].copy_from_slice(tokens.data());
        Ok(Self { tokens: full, mask: (0..M_MAX).map(|i| i < m).collect() })
    }

    pub fn occupied(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Occupied tokens stacked in slot order.
    pub fn active_tokens(&self) -> Mat {
        let rows: Vec<Vec<f64>> = (0..self.mask.len()).filter(|&i| self.mask[i]).map(|i| self.tokens.row(i).to_vec()).collect();
        Mat::from_rows(&rows)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CodecReport {
    pub losses: Vec<f64>,
    pub heldout_class_accuracy: f64,
    pub heldout_bbox_l1: f64,
    pub heldout_iou: f64,
    pub heldout_elements: usize,
}

#[derive(Clone, Debug)]
pub struct Codec {
    arch: CodecArch,
    store: ParamStore,
    enc: [Linear; 3],
    enc_skip: Linear,
    dec: [Linear; 2],
    cls_head: Linear,
    box_head: Linear,
    box_skip: Linear,
    /// Per-dimension latent mean and std, fitted after training.
    lat_mean: ParamId,
    lat_std: ParamId,
}

impl Codec {
    pub fn new<R: Rng + ?Sized>(arch: &CodecArch, rng: &mut R) -> Self {
        let mut s = ParamStore::new();
        let (c, d, h) = (arch.n_classes, arch.latent_dim, arch.hidden);
        let input = c + 4;
        let enc =
            [Linear::new(&mut s, "enc.0", input, h, 1.0, rng), Linear::new(&mut s, "enc.1", h, h, 1.0, rng), Linear::new(&mut s, "enc.2", h, d, 1.0, rng)];
        let enc_skip = Linear::new(&mut s, "enc.skip", input, d, 1.0, rng);
        let dec = [Linear::new(&mut s, "dec.0", d, h, 1.0, rng), Linear::new(&mut s, "dec.1", h, h, 1.0, rng)];
        let cls_head = Linear::new(&mut s, "dec.cls", h, c, 1.0, rng);
        let box_head = Linear::new(&mut s, "dec.box", h, 4, 1.0, rng);
        let box_skip = Linear::new(&mut s, "dec.box_skip", d, 4, 1.0, rng);
        let lat_mean = s.add("latent.mean", Mat::zeros(1, d));
        let lat_std = s.add("latent.std", Mat::filled(1, d, 1.0));
        Self { arch: arch.clone(), store: s, enc, enc_skip, dec, cls_head, box_head, box_skip, lat_mean, lat_std }
    }

    /// Rebuilds from a saved parameter store.
    pub fn from_store(arch: &CodecArch, store: &ParamStore) -> Result<Self> {
        let mut codec = Self::new(arch, &mut ChaCha8Rng::seed_from_u64(0));
        codec.store.load_from(store)?;
        Ok(codec)
    }

    pub fn arch(&self) -> &CodecArch {
        &self.arch
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn content_hash(&self) -> String {
        self.store.content_hash()
    }

    fn element_inputs(&self, elements: &[Element]) -> Result<Mat> {
        let c = self.arch.n_classes;
        let mut x = Mat::zeros(elements.len(), c + 4);
        for (r, e) in elements.iter().enumerate() {
            if e.cls.index() >= c {
                return Err(Error::UnknownClass(format!("id {}", e.cls.0)));
            }
            let row = x.row_mut(r);
            row[e.cls.index()] = 1.0;
            for (k, v) in e.bbox.to_array().iter().enumerate() {
                row[c + k] = 2.0 * v - 1.0;
            }
        }
        Ok(x)
    }

    /// Raw (unnormalised) latents.
    fn encode_graph(&self, g: &mut Graph, x: Var) -> Var {
        let mut h = self.enc[0].forward(g, x);
        h = g.silu(h);
        h = self.enc[1].forward(g, h);
        h = g.silu(h);
        let main = self.enc[2].forward(g, h);
        let skip = self.enc_skip.forward(g, x);
        g.add(main, skip)
    }

    /// Class logits and box coordinates from raw latents.
    fn decode_graph(&self, g: &mut Graph, z: Var) -> (Var, Var) {
        let mut h = self.dec[0].forward(g, z);
        h = g.silu(h);
        h = self.dec[1].forward(g, h);
        h = g.silu(h);
        let logits = self.cls_head.forward(g, h);
        let b = self.box_head.forward(g, h);
        let skip = self.box_skip.forward(g, z);
        (logits, g.add(b, skip))
    }

    fn normalize(&self, raw: &mut Mat) {
        let (mean, std) = (self.store.value(self.lat_mean).row(0), self.store.value(self.lat_std).row(0));
        for r in 0..raw.rows() {
            for (k, v) in raw.row_mut(r).iter_mut().enumerate() {
                *v = (*v - mean[k]) / std[k];
            }
        }
    }

    fn denormalize(&self, z: &mut Mat) {
        let (mean, std) = (self.store.value(self.lat_mean).row(0), self.store.value(self.lat_std).row(0));
        for r in 0..z.rows() {
            for (k, v) in z.row_mut(r).iter_mut().enumerate() {
                *v = *v * std[k] + mean[k];
            }
        }
    }

    /// Normalised per-element tokens for a flat element list.
    pub fn encode_elements(&self, elements: &[Element]) -> Result<Mat> {
        let x = self.element_inputs(elements)?;
        let mut g = Graph::new(&self.store);
        let xv = g.constant(x);
        let z = self.encode_graph(&mut g, xv);
        let mut out = g.value(z).clone();
        self.normalize(&mut out);
        Ok(out)
    }

    /// `M x latent_dim` tokens of one layout.
    pub fn encode_tokens(&self, layout: &Layout) -> Result<Mat> {
        if layout.is_empty() || layout.len() > M_MAX {
            return Err(Error::Config(format!("cannot encode a layout with {} elements (limit {M_MAX})", layout.len())));
        }
        self.encode_elements(&layout.elements)
    }

    /// Token matrices for many layouts, encoded in one pass.
    pub fn encode_batch(&self, layouts: &[Layout]) -> Result<Vec<Mat>> {
        let mut all = Vec::new();
        for l in layouts {
            if l.is_empty() || l.len() > M_MAX {
                return Err(Error::Config(format!("cannot encode a layout with {} elements (limit {M_MAX})", l.len())));
            }
            all.extend_from_slice(&l.elements);
        }
        let z = self.encode_elements(&all)?;
        let mut out = Vec::with_capacity(layouts.len());
        let mut start = 0;
        for l in layouts {
            out.push(z.slice_rows(start, l.len()));
            start += l.len();
        }
        Ok(out)
    }

    pub fn encode_layout(&self, layout: &Layout) -> Result<LatentSeq> {
        LatentSeq::from_tokens(&self.encode_tokens(layout)?)
    }

    /// Decodes stacked normalised tokens into elements; always valid boxes.
    pub fn decode_tokens(&self, tokens: &Mat) -> Layout {
        let mut z = tokens.clone();
        self.denormalize(&mut z);
        let mut g = Graph::new(&self.store);
        let zv = g.constant(z);
        let (logits, boxes) = self.decode_graph(&mut g, zv);
        let (lv, bv) = (g.value(logits), g.value(boxes));
        let elements = (0..lv.rows())
            .map(|r| {
                let row = lv.row(r);
                let cls = (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best });
                let b = bv.row(r);
                Element::new(ElementClass(cls as u8), BBox::new(b[0], b[1], b[2], b[3]).sanitized())
            })
            .collect();
        Layout::new(elements)
    }

    pub fn decode_latent(&self, z: &LatentSeq) -> Layout {
        self.decode_tokens(&z.active_tokens())
    }

    /// Mean-pooled normalised latent, the layout-level feature vector.
    pub fn pooled_feature(&self, tokens: &Mat) -> Vec<f64> {
        let (m, d) = tokens.shape();
        let mut out = vec![0.0; d];
        for r in 0..m {
            for (o, v) in out.iter_mut().zip(tokens.row(r)) {
                *o += v / m as f64;
            }
        }
        out
    }

    pub fn layout_features(&self, layouts: &[Layout]) -> Result<Vec<Vec<f64>>> {
        Ok(self.encode_batch(layouts)?.iter().map(|t| self.pooled_feature(t)).collect())
    }

    fn fit_latent_stats(&mut self, elements: &[Element]) -> Result<()> {
        let x = self.element_inputs(elements)?;
        let raw = {
            let mut g = Graph::new(&self.store);
            let xv = g.constant(x);
            let z = self.encode_graph(&mut g, xv);
            g.value(z).clone()
        };
        let (n, d) = raw.shape();
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for r in 0..n {
            for k in 0..d {
                mean[k] += raw.get(r, k) / n as f64;
            }
        }
        for r in 0..n {
            for k in 0..d {
                var[k] += (raw.get(r, k) - mean[k]).powi(2) / n as f64;
            }
        }
        *self.store.value_mut(self.lat_mean) = Mat::from_vec(1, d, mean);
        *self.store.value_mut(self.lat_std) = Mat::from_vec(1, d, var.iter().map(|v| v.sqrt().max(1e-6)).collect());
        Ok(())
    }
}

/// Reconstruction quality over a set of elements.
pub fn reconstruction_metrics(codec: &Codec, elements: &[Element]) -> Result<(f64, f64, f64)> {
    if elements.is_empty() {
        return Err(Error::Empty("no elements to evaluate".into()));
    }
    let z = codec.encode_elements(elements)?;
    let rec = codec.decode_tokens(&z);
    let n = elements.len() as f64;
    let mut acc = 0.0;
    let mut l1 = 0.0;
    let mut iou = 0.0;
    for (a, b) in elements.iter().zip(&rec.elements) {
        acc += (a.cls == b.cls) as u8 as f64 / n;
        let (pa, pb) = (a.bbox.to_array(), b.bbox.to_array());
        l1 += pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>() / 4.0 / n;
        iou += a.bbox.iou(&b.bbox) / n;
    }
    Ok((acc, l1, iou))
}

/// Deterministic train / held-out split of layouts by a seeded shuffle.
pub fn split_holdout(n: usize, frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    let held = ((n as f64 * frac).round() as usize).min(n.saturating_sub(1));
    let train = idx.split_off(held);
    (train, idx)
}

pub fn train_codec(layouts: &[Layout], cfg: &CodecConfig, seed: u64) -> Result<(Codec, CodecReport)> {
    if layouts.is_empty() {
        return Err(Error::Empty("codec training needs layouts".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut codec = Codec::new(&cfg.arch, &mut rng);
    let (train_idx, held_idx) = split_holdout(layouts.len(), cfg.holdout_frac, seed);
    let train: Vec<Element> = train_idx.iter().flat_map(|&i| layouts[i].elements.iter().copied()).collect();
    let held: Vec<Element> = held_idx.iter().flat_map(|&i| layouts[i].elements.iter().copied()).collect();

    let mut opt = Adam::new(&codec.store, cfg.optim.clone());
    let mut guard = DivergenceGuard::new(&codec.store, 100);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<Element> = (0..cfg.batch_size).map(|_| train[rng.random_range(0..train.len())]).collect();
        let x = codec.element_inputs(&batch)?;
        let targets = Rc::new(batch.iter().map(|e| e.cls.index()).collect::<Vec<_>>());
        let boxes = Mat::from_rows(&batch.iter().map(|e| e.bbox.to_array().to_vec()).collect::<Vec<_>>());
        let (loss, grads) = {
            let mut g = Graph::new(&codec.store);
            let xv = g.constant(x);
            let z = codec.encode_graph(&mut g, xv);
            let (logits, pred) = codec.decode_graph(&mut g, z);
            let ce = g.cross_entropy(logits, targets);
            let tb = g.constant(boxes);
            let diff = g.sub(pred, tb);
            let sq = g.square(diff);
            let mse = g.mean(sq);
            let mse = g.scale(mse, cfg.bbox_weight);
            let loss = g.add(ce, mse);
            (g.value(loss).item(), g.backward(loss))
        };
        guard.check(step, loss, &grads, &codec.store)?;
        opt.step(&mut codec.store, &grads);
        losses.push(loss);
    }
    codec.fit_latent_stats(&train)?;
    let mut report = CodecReport { losses, heldout_elements: held.len(), ..CodecReport::default() };
    if !held.is_empty() {
        let (acc, l1, iou) = reconstruction_metrics(&codec, &held)?;
        report.heldout_class_accuracy = acc;
        report.heldout_bbox_l1 = l1;
        report.heldout_iou = iou;
    }
    Ok((codec, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{gen_corpus, validate_layout, ClassRegistry, CorpusConfig};

    fn small_corpus() -> Vec<Layout> {
        gen_corpus(&CorpusConfig { n_layouts: 300, ..CorpusConfig::default() }, 0).unwrap().layouts
    }

    #[test]
    fn encode_is_deterministic_and_per_element() {
        let codec = Codec::new(&CodecArch::default(), &mut ChaCha8Rng::seed_from_u64(1));
        let l = &small_corpus()[0];
        let a = codec.encode_layout(l).unwrap();
        assert_eq!(a, codec.encode_layout(l).unwrap());
        assert_eq!(a.occupied(), l.len());
        assert!(a.tokens.data()[l.len() * 8..].iter().all(|&v| v == 0.0));

        let mut nudged = l.clone();
        nudged.elements[0].bbox.x0 = (nudged.elements[0].bbox.x0 + 0.005).min(nudged.elements[0].bbox.x1);
        let b = codec.encode_tokens(&nudged).unwrap();
        let a = codec.encode_tokens(l).unwrap();
        assert_ne!(a.row(0), b.row(0));
        for r in 1..l.len() {
            assert_eq!(a.row(r), b.row(r));
        }

        let mut rev = l.clone();
        rev.elements.reverse();
        let c = codec.encode_tokens(&rev).unwrap();
        for r in 0..l.len() {
            assert_eq!(a.row(r), c.row(l.len() - 1 - r));
        }
    }

    #[test]
    fn full_layout_has_no_free_slots() {
        let codec = Codec::new(&CodecArch::default(), &mut ChaCha8Rng::seed_from_u64(1));
        let l = Layout::new(vec![small_corpus()[0].elements[0]; M_MAX]);
        assert_eq!(codec.encode_layout(&l).unwrap().occupied(), M_MAX);
        let over = Layout::new(vec![l.elements[0]; M_MAX + 1]);
        assert!(codec.encode_layout(&over).is_err());
    }

    #[test]
    fn decoding_always_yields_valid_layouts() {
        let codec = Codec::new(&CodecArch::default(), &mut ChaCha8Rng::seed_from_u64(2));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reg = ClassRegistry::default();
        let z = LatentSeq::from_tokens(&Mat::zeros(1, 8)).unwrap();
        let one = codec.decode_latent(&z);
        assert_eq!(one.len(), 1);
        assert!(validate_layout(&one, &reg).is_empty());
        for _ in 0..20 {
            let wild = Mat::randn(7, 8, 10.0, &mut rng);
            let l = codec.decode_tokens(&wild);
            assert!(validate_layout(&l, &reg).is_empty());
            assert_eq!(l, codec.decode_tokens(&wild));
        }
    }

    #[test]
    fn untrained_codec_is_no_better_than_majority() {
        let corpus = small_corpus();
        let cfg = CodecConfig { steps: 0, ..CodecConfig::default() };
        let (_, report) = train_codec(&corpus, &cfg, 0).unwrap();
        let dist = crate::metrics::class_distribution(&corpus).unwrap();
        let majority = *dist.histogram.values().max().unwrap() as f64 / dist.total() as f64;
        assert!(report.heldout_class_accuracy <= majority, "{} > {majority}", report.heldout_class_accuracy);
    }

    #[test]
    fn training_is_reproducible_and_learns() {
        let corpus = small_corpus();
        let cfg = CodecConfig { steps: 300, optim: AdamConfig { lr: 3e-3, ..AdamConfig::default() }, ..CodecConfig::default() };
        let (a, ra) = train_codec(&corpus, &cfg, 5).unwrap();
        let (b, rb) = train_codec(&corpus, &cfg, 5).unwrap();
        assert_eq!(ra.losses, rb.losses);
        assert_eq!(a.content_hash(), b.content_hash());
        assert!(ra.losses[299] < 0.5 * ra.losses[0]);
        let back = Codec::from_store(a.arch(), a.store()).unwrap();
        assert_eq!(back.content_hash(), a.content_hash());
    }
}
