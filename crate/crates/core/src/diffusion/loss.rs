use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::DiffusionModel;
use super::schedule::NoiseSchedule;
use crate::nn::{Graph, Mat, Segments, Var};

/// Per-timestep loss weight `w(t)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossWeighting {
    #[default]
    Constant,
    /// `min(SNR_t, gamma) / SNR_t`.
    MinSnr { gamma: f64 },
}

impl LossWeighting {
    pub fn weight(&self, schedule: &NoiseSchedule, t: usize) -> f64 {
        match *self {
            LossWeighting::Constant => 1.0,
            LossWeighting::MinSnr { gamma } => {
                let snr = schedule.alpha_bar(t) / (1.0 - schedule.alpha_bar(t));
                snr.min(gamma) / snr
            }
        }
    }
}

/// `α_t·z0 + σ_t·ε`.
pub fn q_sample(schedule: &NoiseSchedule, z0: &Mat, eps: &Mat, t: usize) -> Mat {
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    z0.zip_map(eps, |x, e| a * x + s * e)
}

/// Inputs and targets of one denoising-loss evaluation.
#[derive(Clone, Debug)]
pub struct NoisedBatch {
    pub z_t: Mat,
    pub eps: Mat,
    pub t: Vec<usize>,
    pub cond: Vec<usize>,
    pub seg: Rc<Segments>,
}

/// Draws `t ~ U{1..T}`, `ε ~ N(0, I)` and the condition dropout per sequence.
pub fn make_noised_batch<R: Rng + ?Sized>(schedule: &NoiseSchedule, z0s: &[&Mat], conds: &[usize], null: usize, p_uncond: f64, rng: &mut R) -> NoisedBatch {
    assert_eq!(z0s.len(), conds.len());
    let d = z0s.first().map_or(0, |z| z.cols());
    let mut zt_parts = Vec::with_capacity(z0s.len());
    let mut eps_parts = Vec::with_capacity(z0s.len());
    let mut t = Vec::with_capacity(z0s.len());
    let mut cond = Vec::with_capacity(z0s.len());
    for (z0, &c) in z0s.iter().zip(conds) {
        let ti = rng.random_range(1..=schedule.steps());
        let eps = Mat::randn(z0.rows(), d, 1.0, rng);
        zt_parts.push(q_sample(schedule, z0, &eps, ti));
        eps_parts.push(eps);
        t.push(ti);
        cond.push(if rng.random_bool(p_uncond) { null } else { c });
    }
    let seg = Rc::new(Segments::from_lengths(&z0s.iter().map(|z| z.rows()).collect::<Vec<_>>()));
    NoisedBatch { z_t: Mat::vstack(&zt_parts.iter().collect::<Vec<_>>()), eps: Mat::vstack(&eps_parts.iter().collect::<Vec<_>>()), t, cond, seg }
}

/// Weighted mean squared error between a prediction and the batch noise,
/// averaged over sequences' tokens and dimensions.
pub fn ddpm_loss_from_prediction(g: &mut Graph, pred: Var, batch: &NoisedBatch, schedule: &NoiseSchedule, weighting: LossWeighting) -> Var {
    let target = g.constant(batch.eps.clone());
    let diff = g.sub(pred, target);
    let sq = g.square(diff);
    if weighting == LossWeighting::Constant {
        return g.mean(sq);
    }
    let mut w = Mat::zeros(batch.eps.rows(), batch.eps.cols());
    for (s, &t) in batch.t.iter().enumerate() {
        let wt = weighting.weight(schedule, t);
        for r in batch.seg.range(s) {
            w.row_mut(r).fill(wt);
        }
    }
    let wv = g.constant(w);
    let weighted = g.mul(sq, wv);
    g.mean(weighted)
}

/// Builds the denoising loss of `model` on `batch` inside `g`.
pub fn ddpm_loss(g: &mut Graph, model: &DiffusionModel, batch: &NoisedBatch, weighting: LossWeighting) -> Var {
    let z = g.constant(batch.z_t.clone());
    let pred = model.eps_graph(g, z, &batch.seg, &batch.t, &batch.cond);
    ddpm_loss_from_prediction(g, pred, batch, model.schedule(), weighting)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::{make_schedule, ScheduleKind};
    use crate::nn::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(n: usize, seed: u64) -> (NoiseSchedule, NoisedBatch) {
        let s = make_schedule(50, ScheduleKind::Cosine).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z0: Vec<Mat> = (0..n).map(|i| Mat::randn(3 + i % 5, 8, 1.0, &mut rng)).collect();
        let refs: Vec<&Mat> = z0.iter().collect();
        let b = make_noised_batch(&s, &refs, &vec![0; n], 1, 0.1, &mut rng);
        (s, b)
    }

    #[test]
    fn oracle_prediction_has_zero_loss() {
        let (s, b) = batch(4, 0);
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let pred = g.constant(b.eps.clone());
        let loss = ddpm_loss_from_prediction(&mut g, pred, &b, &s, LossWeighting::Constant);
        assert_eq!(g.value(loss).item(), 0.0);
    }

    #[test]
    fn zero_prediction_loss_is_about_one() {
        let (s, b) = batch(2000, 1);
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let pred = g.constant(Mat::zeros(b.eps.rows(), b.eps.cols()));
        let loss = ddpm_loss_from_prediction(&mut g, pred, &b, &s, LossWeighting::Constant);
        let loss = g.value(loss).item();
        assert!((loss - 1.0).abs() < 0.03, "{loss}");
    }

    #[test]
    fn no_noise_at_t_zero() {
        let s = make_schedule(50, ScheduleKind::Cosine).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z0 = Mat::randn(5, 8, 1.0, &mut rng);
        let eps = Mat::randn(5, 8, 1.0, &mut rng);
        assert_eq!(q_sample(&s, &z0, &eps, 0), z0);
    }

    #[test]
    fn min_snr_weights_are_at_most_one() {
        let s = make_schedule(50, ScheduleKind::Cosine).unwrap();
        let w = LossWeighting::MinSnr { gamma: 5.0 };
        for t in 1..=50 {
            let v = w.weight(&s, t);
            assert!(v > 0.0 && v <= 1.0);
        }
    }
}
