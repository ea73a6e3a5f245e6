use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::RevisionOp;
use crate::error::{Error, Result};
use crate::layout::{BBox, Element, ElementClass, Layout, M_MAX};

pub const RESIZE_MIN: f64 = 0.5;
pub const RESIZE_MAX: f64 = 2.0;

/// Per-element edit probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    pub p_move: f64,
    pub p_resize: f64,
    pub p_reclass: f64,
    pub p_drop: f64,
    pub p_add: f64,
    pub n_classes: usize,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self { p_move: 0.5, p_resize: 0.4, p_reclass: 0.15, p_drop: 0.15, p_add: 0.15, n_classes: 10 }
    }
}

impl PerturbConfig {
    pub fn zero() -> Self {
        Self { p_move: 0.0, p_resize: 0.0, p_reclass: 0.0, p_drop: 0.0, p_add: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [("p_move", self.p_move), ("p_resize", self.p_resize), ("p_reclass", self.p_reclass), ("p_drop", self.p_drop), ("p_add", self.p_add)];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if self.n_classes == 0 || self.n_classes > u8::MAX as usize {
            return Err(Error::Config("n_classes must lie in 1..=255".into()));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.p_move == 0.0 && self.p_resize == 0.0 && self.p_reclass == 0.0 && self.p_drop == 0.0 && self.p_add == 0.0
    }
}

/// Shifts an interval of length `len <= 1` starting at `lo` into `[0, 1]`.
fn fit_interval(lo: f64, len: f64) -> (f64, f64) {
    let len = len.clamp(0.0, 1.0);
    let lo = lo.clamp(0.0, 1.0 - len);
    (lo, (lo + len).min(1.0))
}

fn moved<R: Rng + ?Sized>(b: BBox, rng: &mut R) -> BBox {
    let (w, h) = (b.width(), b.height());
    let dx = if w > 0.0 { rng.random_range(-w..=w) } else { 0.0 };
    let dy = if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
    let (x0, x1) = fit_interval(b.x0 + dx, w);
    let (y0, y1) = fit_interval(b.y0 + dy, h);
    BBox::new(x0, y0, x1, y1)
}

/// Scales width and height about the centre by independent factors.
fn resized(b: BBox, fx: f64, fy: f64) -> BBox {
    let (cx, cy) = b.center();
    let (w, h) = ((b.width() * fx).min(1.0), (b.height() * fy).min(1.0));
    let (x0, x1) = fit_interval(cx - w / 2.0, w);
    let (y0, y1) = fit_interval(cy - h / 2.0, h);
    BBox::new(x0, y0, x1, y1)
}

pub fn sample_resize_factor<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(RESIZE_MIN..=RESIZE_MAX)
}

/// A new element borrowing the size of an existing one, placed anywhere.
fn new_element<R: Rng + ?Sized>(like: &Element, n_classes: usize, rng: &mut R) -> Element {
    let f = sample_resize_factor(rng);
    let (w, h) = ((like.bbox.width() * f).clamp(0.02, 1.0), (like.bbox.height() * f).clamp(0.02, 1.0));
    let (x0, x1) = fit_interval(rng.random_range(0.0..=1.0 - w), w);
    let (y0, y1) = fit_interval(rng.random_range(0.0..=1.0 - h), h);
    Element::new(ElementClass(rng.random_range(0..n_classes) as u8), BBox::new(x0, y0, x1, y1))
}

/// Corrupts a finished layout into a draft. Returns the draft and the
/// forward ops (final -> draft); their inverse is the revision path.
pub fn perturb_layout<R: Rng + ?Sized>(final_layout: &Layout, cfg: &PerturbConfig, rng: &mut R) -> Result<(Layout, Vec<RevisionOp>)> {
    cfg.validate()?;
    if final_layout.is_empty() {
        return Err(Error::Empty("cannot perturb an empty layout".into()));
    }
    let m = final_layout.len();
    let mut layout = final_layout.clone();
    let mut ops = Vec::new();
    let mut push = |op: RevisionOp, layout: &mut Layout| {
        op.apply(layout).expect("op built from the current state");
        ops.push(op);
    };

    for index in 0..m {
        if rng.random_bool(cfg.p_reclass) && cfg.n_classes > 1 {
            let from = layout.elements[index].cls;
            let mut to = ElementClass(rng.random_range(0..cfg.n_classes - 1) as u8);
            if to >= from {
                to = ElementClass(to.0 + 1);
            }
            push(RevisionOp::Reclass { index, from, to }, &mut layout);
        }
        if rng.random_bool(cfg.p_resize) {
            let from = layout.elements[index].bbox;
            let (fx, fy) = (sample_resize_factor(rng), sample_resize_factor(rng));
            push(RevisionOp::Resize { index, from, to: resized(from, fx, fy) }, &mut layout);
        }
        if rng.random_bool(cfg.p_move) {
            let from = layout.elements[index].bbox;
            push(RevisionOp::Move { index, from, to: moved(from, rng) }, &mut layout);
        }
    }

    for index in (0..m).rev() {
        if layout.len() > 1 && rng.random_bool(cfg.p_drop) {
            let element = layout.elements[index];
            push(RevisionOp::Drop { index, element }, &mut layout);
        }
    }

    let cap = m.div_ceil(2).saturating_add(m).min(M_MAX);
    for _ in 0..m {
        if layout.len() >= cap {
            break;
        }
        if rng.random_bool(cfg.p_add) {
            let like = final_layout.elements[rng.random_range(0..m)];
            let element = new_element(&like, cfg.n_classes, rng);
            let index = rng.random_range(0..=layout.len());
            push(RevisionOp::Add { index, element }, &mut layout);
        }
    }
    Ok((layout, ops))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{ClassRegistry, BUTTON};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(m: usize) -> Layout {
        Layout::new(
            (0..m)
                .map(|i| {
                    let y = i as f64 / m as f64;
                    Element::new(BUTTON, BBox::new(0.1, y, 0.6, y + 0.5 / m as f64))
                })
                .collect(),
        )
    }

    #[test]
    fn zero_strength_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = grid(6);
        let (p, ops) = perturb_layout(&l, &PerturbConfig::zero(), &mut rng).unwrap();
        assert_eq!(p, l);
        assert!(ops.is_empty());
    }

    #[test]
    fn counts_stay_within_bounds_at_max_strength() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = grid(10);
        let all = PerturbConfig { p_move: 1.0, p_resize: 1.0, p_reclass: 1.0, p_drop: 0.0, p_add: 1.0, n_classes: 10 };
        let (p, _) = perturb_layout(&l, &all, &mut rng).unwrap();
        assert_eq!(p.len(), 15);
        let drop_all = PerturbConfig { p_drop: 1.0, p_add: 0.0, ..all };
        let (p, _) = perturb_layout(&l, &drop_all, &mut rng).unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn bad_probability_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = PerturbConfig { p_move: 1.5, ..PerturbConfig::default() };
        assert!(perturb_layout(&grid(3), &cfg, &mut rng).is_err());
    }

    #[test]
    fn drafts_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = ClassRegistry::default();
        for _ in 0..200 {
            let (p, _) = perturb_layout(&grid(11), &PerturbConfig::default(), &mut rng).unwrap();
            assert!(crate::layout::validate_layout(&p, &r).is_empty());
        }
    }
}
