use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::ops::{apply_ops, invert_ops, keystroke_cost, RevisionOp};
use super::perturb::{perturb_layout, PerturbConfig};
use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::metrics::chamfer_distance;

/// Where step times come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSource {
    /// Cumulative keystroke cost of the ops.
    #[default]
    Keystroke,
    /// Recorded wall-clock offsets.
    WallClock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevisionStep {
    pub layout: Layout,
    pub ops: Vec<RevisionOp>,
    /// Seconds since the first step.
    pub t: f64,
}

/// Steps `0..=N`; step `N` is the final revision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevisionSequence {
    pub steps: Vec<RevisionStep>,
    /// Chamfer distance of each step to the final layout.
    pub d: Vec<f64>,
    /// Remaining time to the final layout.
    pub tau: Vec<f64>,
    #[serde(default)]
    pub source: TimeSource,
}

impl RevisionSequence {
    /// Number of revisions `N` (one less than the number of steps).
    pub fn n(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    pub fn final_layout(&self) -> &Layout {
        &self.steps.last().expect("sequence has at least one step").layout
    }

    /// Folding each step's ops over its predecessor must reproduce it.
    pub fn check_replay(&self) -> Result<()> {
        for i in 1..self.steps.len() {
            let replayed = apply_ops(&self.steps[i - 1].layout, &self.steps[i].ops)?;
            if replayed != self.steps[i].layout {
                return Err(Error::Validation(vec![format!("step {i} does not replay from step {}", i - 1)]));
            }
        }
        Ok(())
    }

    /// Structural and label invariants.
    pub fn check(&self) -> Result<()> {
        let n = self.steps.len();
        let mut errs = Vec::new();
        if n < 2 {
            errs.push("a sequence needs at least two steps".to_string());
        }
        if self.d.len() != n || self.tau.len() != n {
            errs.push(format!("label lengths d={} tau={} differ from {n} steps", self.d.len(), self.tau.len()));
        } else if n > 0 {
            if self.d[n - 1] != 0.0 || self.tau[n - 1] != 0.0 {
                errs.push("final step must have d = tau = 0".into());
            }
            if self.d.iter().chain(&self.tau).any(|v| !v.is_finite() || *v < 0.0) {
                errs.push("labels must be finite and non-negative".into());
            }
            if self.tau.windows(2).any(|w| w[1] > w[0]) {
                errs.push("tau must be non-increasing".into());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

/// Builds an unlabelled sequence from a starting layout and per-step ops.
pub fn sequence_from_ops(draft: Layout, chunks: Vec<Vec<RevisionOp>>, times: Option<Vec<f64>>, source: TimeSource) -> Result<RevisionSequence> {
    let mut steps = vec![RevisionStep { layout: draft, ops: Vec::new(), t: 0.0 }];
    let mut t = 0.0;
    for (i, ops) in chunks.into_iter().enumerate() {
        let layout = apply_ops(&steps.last().unwrap().layout, &ops)?;
        t = match &times {
            Some(ts) => *ts.get(i).ok_or_else(|| Error::Config("fewer times than steps".into()))?,
            None => t + keystroke_cost(&ops) as f64,
        };
        steps.push(RevisionStep { layout, ops, t });
    }
    let n = steps.len();
    annotate_targets(RevisionSequence { steps, d: vec![0.0; n], tau: vec![0.0; n], source })
}

/// Recomputes `d` and `tau` from the steps.
pub fn annotate_targets(mut seq: RevisionSequence) -> Result<RevisionSequence> {
    let n = seq.steps.len();
    if n == 0 {
        return Err(Error::Empty("sequence without steps".into()));
    }
    let last = seq.steps[n - 1].layout.clone();
    seq.d = seq.steps.iter().map(|s| chamfer_distance(&s.layout, &last)).collect::<Result<_>>()?;
    seq.tau = vec![0.0; n];
    for i in (0..n - 1).rev() {
        let step_time = match seq.source {
            TimeSource::Keystroke => keystroke_cost(&seq.steps[i + 1].ops) as f64,
            TimeSource::WallClock => (seq.steps[i + 1].t - seq.steps[i].t).max(0.0),
        };
        seq.tau[i] = seq.tau[i + 1] + step_time;
    }
    seq.d[n - 1] = 0.0;
    Ok(seq)
}

/// Splits `0..k` into `n` consecutive chunks with boundaries `floor(k*i/n)`.
fn chunk_bounds(k: usize, n: usize) -> Vec<usize> {
    (0..=n).map(|i| k * i / n).collect()
}

/// Draft -> final path from a perturbation, retrying a few times when a
/// non-zero config happened to produce no edits.
fn revision_path<R: Rng + ?Sized>(final_layout: &Layout, cfg: &PerturbConfig, rng: &mut R) -> Result<(Layout, Vec<RevisionOp>)> {
    for _ in 0..64 {
        let (draft, forward) = perturb_layout(final_layout, cfg, rng)?;
        if !forward.is_empty() || cfg.is_zero() {
            return Ok((draft, invert_ops(&forward)));
        }
    }
    Ok((final_layout.clone(), Vec::new()))
}

/// Synthetic sequence with `n_steps` revisions ending at `final_layout`.
/// Step `i` still carries the last `(N - i) / N` of the perturbation.
pub fn synth_sequence<R: Rng + ?Sized>(final_layout: &Layout, n_steps: usize, cfg: &PerturbConfig, rng: &mut R) -> Result<RevisionSequence> {
    if n_steps == 0 {
        return Err(Error::Config("n_steps must be at least 1".into()));
    }
    let (draft, path) = revision_path(final_layout, cfg, rng)?;
    let bounds = chunk_bounds(path.len(), n_steps);
    let chunks = bounds.windows(2).map(|w| path[w[0]..w[1]].to_vec()).collect();
    sequence_from_ops(draft, chunks, None, TimeSource::Keystroke)
}

/// One step per edit, timed by a wall clock whose pace per keystroke unit
/// is log-normal; mimics fine-grained recorded editing sessions.
pub fn logged_style_sequence<R: Rng + ?Sized>(final_layout: &Layout, cfg: &PerturbConfig, pace_sigma: f64, rng: &mut R) -> Result<RevisionSequence> {
    let pace = LogNormal::new(0.0, pace_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let (draft, path) = revision_path(final_layout, cfg, rng)?;
    if path.is_empty() {
        return sequence_from_ops(draft, vec![Vec::new()], Some(vec![0.0]), TimeSource::WallClock);
    }
    let mut t = 0.0;
    let mut times = Vec::with_capacity(path.len());
    for op in &path {
        t += op.cost() as f64 * pace.sample(rng);
        times.push(t);
    }
    let chunks = path.into_iter().map(|op| vec![op]).collect();
    sequence_from_ops(draft, chunks, Some(times), TimeSource::WallClock)
}

/// Keeps steps `0, stride, 2*stride, ...` and always the final one; the ops
/// of dropped steps are merged into the next kept step.
pub fn subsample_sequence(seq: &RevisionSequence, stride: usize) -> Result<RevisionSequence> {
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    let last = seq.steps.len() - 1;
    let mut keep: Vec<usize> = (0..=last).step_by(stride).collect();
    if *keep.last().unwrap() != last {
        keep.push(last);
    }
    let mut steps = Vec::with_capacity(keep.len());
    let mut prev = 0;
    for &k in &keep {
        let mut step = seq.steps[k].clone();
        if k > 0 {
            step.ops = seq.steps[prev + 1..=k].iter().flat_map(|s| s.ops.iter().cloned()).collect();
        }
        steps.push(step);
        prev = k;
    }
    Ok(RevisionSequence { steps, d: keep.iter().map(|&k| seq.d[k]).collect(), tau: keep.iter().map(|&k| seq.tau[k]).collect(), source: seq.source })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub preferred: Layout,
    pub rejected: Layout,
    pub sequence: usize,
    /// Step index of the rejected layout.
    pub step: usize,
    /// `N` of the source sequence.
    pub n: usize,
}

/// Final layout preferred over every earlier step.
pub fn build_preference_pairs(seq: &RevisionSequence, sequence_id: usize) -> Result<Vec<PreferencePair>> {
    let n = seq.n();
    if n == 0 {
        return Err(Error::Empty("preference pairs need N >= 1".into()));
    }
    let fin = seq.final_layout();
    Ok((0..n).map(|i| PreferencePair { preferred: fin.clone(), rejected: seq.steps[i].layout.clone(), sequence: sequence_id, step: i, n }).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_sequences: usize,
    pub n_steps: usize,
    pub perturb: PerturbConfig,
    /// Logged-style sequences (fine steps, wall-clock time) for finetuning.
    pub n_logged: usize,
    pub logged_stride: usize,
    pub pace_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_sequences: 2000, n_steps: 8, perturb: PerturbConfig::default(), n_logged: 200, logged_stride: 10, pace_sigma: 0.5 }
    }
}

/// Independent generator stream per sequence.
fn stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Sequences ending at `finals[i % finals.len()]`.
pub fn synth_revision_set(finals: &[Layout], cfg: &SynthConfig, seed: u64) -> Result<Vec<RevisionSequence>> {
    if finals.is_empty() {
        return Err(Error::Empty("no final layouts".into()));
    }
    (0..cfg.n_sequences).map(|i| synth_sequence(&finals[i % finals.len()], cfg.n_steps, &cfg.perturb, &mut stream(seed, i))).collect()
}

/// Logged-style sequences, subsampled with `logged_stride`.
pub fn synth_logged_set(finals: &[Layout], cfg: &SynthConfig, seed: u64) -> Result<Vec<RevisionSequence>> {
    if finals.is_empty() {
        return Err(Error::Empty("no final layouts".into()));
    }
    (0..cfg.n_logged)
        .map(|i| {
            let mut rng = stream(seed ^ 0x9e37_79b9_7f4a_7c15, i);
            let seq = logged_style_sequence(&finals[i % finals.len()], &cfg.perturb, cfg.pace_sigma, &mut rng)?;
            subsample_sequence(&seq, cfg.logged_stride)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{BBox, Element, BUTTON, LABEL};

    fn base(m: usize) -> Layout {
        Layout::new(
            (0..m)
                .map(|i| {
                    let y = i as f64 / m as f64;
                    Element::new(if i % 2 == 0 { BUTTON } else { LABEL }, BBox::new(0.1, y, 0.7, y + 0.6 / m as f64))
                })
                .collect(),
        )
    }

    #[test]
    fn minimal_sequence_is_draft_then_final() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = synth_sequence(&base(5), 1, &PerturbConfig::default(), &mut rng).unwrap();
        assert_eq!(s.steps.len(), 2);
        assert_eq!(s.final_layout(), &base(5));
        s.check().unwrap();
        s.check_replay().unwrap();
    }

    #[test]
    fn three_step_tau_is_hand_summed_cost() {
        let l = base(3);
        let e = l.elements[0];
        let moved = BBox::new(0.2, 0.0, 0.8, 0.2);
        let chunks = vec![
            vec![RevisionOp::Drop { index: 0, element: e }],
            vec![RevisionOp::Add { index: 0, element: e }],
            vec![RevisionOp::Move { index: 1, from: l.elements[1].bbox, to: moved }, RevisionOp::Move { index: 1, from: moved, to: l.elements[1].bbox }],
        ];
        let s = sequence_from_ops(l.clone(), chunks, None, TimeSource::Keystroke).unwrap();
        assert_eq!(s.tau, vec![1.0 + 3.0 + 4.0, 7.0, 4.0, 0.0]);
        // Step 0 already equals the final layout.
        assert_eq!(s.d[0], 0.0);
        assert_eq!(s.d[3], 0.0);
    }

    #[test]
    fn annotation_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = synth_sequence(&base(8), 5, &PerturbConfig::default(), &mut rng).unwrap();
        assert_eq!(annotate_targets(s.clone()).unwrap(), s);
    }

    #[test]
    fn subsample_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let strong = PerturbConfig { p_move: 1.0, p_resize: 1.0, p_reclass: 0.5, ..PerturbConfig::default() };
        let s = synth_sequence(&base(20), 35, &strong, &mut rng).unwrap();
        let sub = subsample_sequence(&s, 10).unwrap();
        let picked: Vec<usize> = [0, 10, 20, 30, 35].to_vec();
        assert_eq!(sub.steps.len(), picked.len());
        for (k, &i) in picked.iter().enumerate() {
            assert_eq!(sub.steps[k].layout, s.steps[i].layout);
            assert_eq!(sub.d[k], s.d[i]);
            assert_eq!(sub.tau[k], s.tau[i]);
        }
        sub.check_replay().unwrap();
        assert_eq!(subsample_sequence(&s, 1).unwrap(), s);
        let short = synth_sequence(&base(4), 5, &strong, &mut rng).unwrap();
        assert_eq!(subsample_sequence(&short, 10).unwrap().steps.len(), 2);
    }

    #[test]
    fn pairs_prefer_the_final() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = synth_sequence(&base(6), 4, &PerturbConfig::default(), &mut rng).unwrap();
        let pairs = build_preference_pairs(&s, 3).unwrap();
        assert_eq!(pairs.len(), 4);
        assert!(pairs.iter().all(|p| &p.preferred == s.final_layout() && p.sequence == 3));
        let s1 = synth_sequence(&base(6), 1, &PerturbConfig::default(), &mut rng).unwrap();
        assert_eq!(build_preference_pairs(&s1, 0).unwrap().len(), 1);
    }

    #[test]
    fn logged_sequences_use_wall_clock() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = logged_style_sequence(&base(10), &PerturbConfig::default(), 0.5, &mut rng).unwrap();
        assert_eq!(s.source, TimeSource::WallClock);
        s.check().unwrap();
        assert!((s.tau[0] - s.steps.last().unwrap().t).abs() < 1e-9);
    }
}
