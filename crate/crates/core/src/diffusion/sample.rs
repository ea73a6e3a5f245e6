use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::DiffusionModel;
use super::schedule::gaussian_logpdf;
use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::nn::{Graph, Mat, Segments, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub guidance: f64,
    pub seed: u64,
    pub record: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { guidance: 1.0, seed: 0, record: true }
    }
}

/// One ancestral sampling chain. `states[k]` is `z_{T-k}`, so `states[0]`
/// is the initial noise and the last entry is `z_0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub cond: usize,
    pub guidance: f64,
    pub states: Vec<Mat>,
    /// `means[k]` is the mean of `z_{T-k-1}` given `states[k]`.
    pub means: Vec<Mat>,
    pub logps: Vec<f64>,
    pub layout: Layout,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.logps.len()
    }

    pub fn z0(&self) -> &Mat {
        self.states.last().expect("trajectory has a terminal state")
    }

    /// Transition at timestep `t` (`1..=T`): `(z_t, z_{t-1}, μ_t, log p)`.
    pub fn transition(&self, t: usize) -> (&Mat, &Mat, &Mat, f64) {
        let big_t = self.steps();
        assert!(t >= 1 && t <= big_t, "timestep {t} outside 1..={big_t}");
        let k = big_t - t;
        (&self.states[k], &self.states[k + 1], &self.means[k], self.logps[k])
    }
}

fn per_row(seg: &Segments, d: usize, values: impl Fn(usize) -> f64) -> Mat {
    let mut m = Mat::zeros(seg.total_rows(), d);
    for s in 0..seg.len() {
        let v = values(s);
        for r in seg.range(s) {
            m.row_mut(r).fill(v);
        }
    }
    m
}

/// Independent generator for chain `index`.
pub fn chain_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Samples one chain per entry of `conds`, batched across chains. Element
/// counts come from `counts` or the model's count prior.
pub fn sample_batch(model: &DiffusionModel, codec: &Codec, conds: &[usize], counts: Option<&[usize]>, cfg: &SampleConfig) -> Result<Vec<Trajectory>> {
    if conds.is_empty() {
        return Ok(Vec::new());
    }
    if conds.iter().any(|&c| c > model.null_prompt()) {
        return Err(Error::Config("condition index out of range".into()));
    }
    let d = model.latent_dim();
    if codec.latent_dim() != d {
        return Err(Error::Config(format!("codec latent dim {} differs from model {d}", codec.latent_dim())));
    }
    let schedule = model.schedule();
    let big_t = schedule.steps();
    let mut rngs: Vec<ChaCha8Rng> = (0..conds.len()).map(|i| chain_rng(cfg.seed, i)).collect();
    let lengths: Vec<usize> = match counts {
        Some(c) => {
            if c.len() != conds.len() || c.iter().any(|&m| m == 0 || m > model.spec().arch.max_len) {
                return Err(Error::Config("invalid element counts".into()));
            }
            c.to_vec()
        }
        None => conds.iter().zip(&mut rngs).map(|(&c, rng)| model.spec().sample_count(c, rng)).collect(),
    };
    let seg = Rc::new(Segments::from_lengths(&lengths));
    let mut z: Vec<Mat> = lengths.iter().zip(&mut rngs).map(|(&m, rng)| Mat::randn(m, d, 1.0, rng)).collect();
    let mut trajs: Vec<Trajectory> = conds
        .iter()
        .zip(&z)
        .map(|(&c, z0)| Trajectory {
            cond: c,
            guidance: cfg.guidance,
            states: if cfg.record { vec![z0.clone()] } else { Vec::new() },
            means: Vec::new(),
            logps: Vec::new(),
            layout: Layout::default(),
        })
        .collect();

    for t in (1..=big_t).rev() {
        let stacked = Mat::vstack(&z.iter().collect::<Vec<_>>());
        let eps = {
            let mut g = Graph::new(model.store());
            let zv = g.constant(stacked);
            let e = model.guided_eps_graph(&mut g, zv, &seg, &vec![t; conds.len()], conds, cfg.guidance);
            g.value(e).clone()
        };
        let var = schedule.posterior_variance(t);
        let std = var.sqrt();
        for (i, zi) in z.iter_mut().enumerate() {
            let r = seg.range(i);
            let e = eps.slice_rows(r.start, r.len());
            let mean = Mat::from_vec(zi.rows(), d, schedule.posterior_mean(zi.data(), e.data(), t));
            let noise = Mat::randn(mean.rows(), d, 1.0, &mut rngs[i]);
            let next = mean.zip_map(&noise, |m, n| m + std * n);
            if cfg.record {
                let lp = gaussian_logpdf(next.data(), mean.data(), var);
                let tr = &mut trajs[i];
                tr.logps.push(lp);
                tr.means.push(mean);
                tr.states.push(next.clone());
            }
            *zi = next;
        }
    }
    for (tr, zi) in trajs.iter_mut().zip(z) {
        tr.layout = codec.decode_tokens(&zi);
        tr.layout.prompt_id = model.spec().prompts.get(tr.cond).cloned();
        if !cfg.record {
            tr.states.push(zi);
        }
    }
    Ok(trajs)
}

pub fn sample_with_trajectory(model: &DiffusionModel, codec: &Codec, cond: usize, cfg: &SampleConfig) -> Result<Trajectory> {
    Ok(sample_batch(model, codec, &[cond], None, cfg)?.remove(0))
}

/// Transitions to score: one `(z_t, z_{t-1}, t, cond)` per entry.
pub struct TransitionBatch<'a> {
    pub z_t: Vec<&'a Mat>,
    pub z_prev: Vec<&'a Mat>,
    pub t: Vec<usize>,
    pub cond: Vec<usize>,
}

/// Log-density of every transition under the current parameters, as a
/// `n x 1` column inside `g`.
pub fn transition_logprob_graph(model: &DiffusionModel, g: &mut Graph, batch: &TransitionBatch, guidance: f64) -> Var {
    let n = batch.t.len();
    assert!(n > 0 && batch.z_t.len() == n && batch.z_prev.len() == n && batch.cond.len() == n);
    let d = model.latent_dim();
    let schedule = model.schedule();
    let seg = Rc::new(Segments::from_lengths(&batch.z_t.iter().map(|z| z.rows()).collect::<Vec<_>>()));
    let zt = Mat::vstack(&batch.z_t);
    let zp = Mat::vstack(&batch.z_prev);
    let inv2var = per_row(&seg, d, |s| -0.5 / schedule.posterior_variance(batch.t[s]));
    let norm: Vec<f64> = (0..n)
        .map(|s| {
            let var = schedule.posterior_variance(batch.t[s]);
            -0.5 * (2.0 * std::f64::consts::PI * var).ln() * (seg.range(s).len() * d) as f64
        })
        .collect();

    let ztv = g.constant(zt.clone());
    let eps = model.guided_eps_graph(g, ztv, &seg, &batch.t, &batch.cond, guidance);
    let mean = match schedule.x0_clip() {
        None => {
            let a_z = zt.zip_map(&per_row(&seg, d, |s| schedule.mean_coefficients(batch.t[s]).0), |x, a| x * a);
            let bv = g.constant(per_row(&seg, d, |s| -schedule.mean_coefficients(batch.t[s]).1));
            let scaled = g.mul(eps, bv);
            let azv = g.constant(a_z);
            g.add(azv, scaled)
        }
        Some(clip) => {
            let ia_z = zt.zip_map(&per_row(&seg, d, |s| schedule.x0_coefficients(batch.t[s]).0), |x, a| x * a);
            let sv = g.constant(per_row(&seg, d, |s| -schedule.x0_coefficients(batch.t[s]).1));
            let scaled = g.mul(eps, sv);
            let iazv = g.constant(ia_z);
            let x0 = g.add(iazv, scaled);
            let x0 = g.clamp(x0, -clip, clip);
            let cxv = g.constant(per_row(&seg, d, |s| schedule.posterior_coefficients(batch.t[s]).0));
            let from_x0 = g.mul(x0, cxv);
            let cz_z = zt.zip_map(&per_row(&seg, d, |s| schedule.posterior_coefficients(batch.t[s]).1), |x, c| x * c);
            let czv = g.constant(cz_z);
            g.add(from_x0, czv)
        }
    };
    let zpv = g.constant(zp);
    let diff = g.sub(zpv, mean);
    let sq = g.square(diff);
    let w = g.constant(inv2var);
    let terms = g.mul(sq, w);
    let rows = g.row_sum(terms);
    let per_seq = g.segment_sum(rows, seg);
    let normv = g.constant(Mat::from_vec(n, 1, norm));
    g.add(per_seq, normv)
}

/// `(μ_t, log p(z_prev | z_t, c))` for a single transition.
pub fn denoise_step_logprob(model: &DiffusionModel, z_t: &Mat, t: usize, cond: usize, z_prev: &Mat, guidance: f64) -> (Mat, f64) {
    let seg = Rc::new(Segments::from_lengths(&[z_t.rows()]));
    let mut g = Graph::new(model.store());
    let zv = g.constant(z_t.clone());
    let eps = model.guided_eps_graph(&mut g, zv, &seg, &[t], &[cond], guidance);
    let mean = Mat::from_vec(z_t.rows(), z_t.cols(), model.schedule().posterior_mean(z_t.data(), g.value(eps).data(), t));
    let lp = gaussian_logpdf(z_prev.data(), mean.data(), model.schedule().posterior_variance(t));
    (mean, lp)
}
