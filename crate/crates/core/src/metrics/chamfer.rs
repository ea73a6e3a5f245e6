use crate::error::{Error, Result};
use crate::layout::{Element, Layout};

/// Distance charged when the other layout has no element of the same class.
pub const LAMBDA_MISS: f64 = 1.0;

/// `(cx, cy, w, h)` geometry of an element.
#[inline]
pub fn element_feature(e: &Element) -> [f64; 4] {
    let (cx, cy) = e.bbox.center();
    [cx, cy, e.bbox.width(), e.bbox.height()]
}

#[inline]
pub(crate) fn feature_dist(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let mut s = 0.0;
    for k in 0..4 {
        let d = a[k] - b[k];
        s += d * d;
    }
    s.sqrt()
}

/// Per-class index of feature vectors, in element order.
struct ClassBuckets {
    buckets: Vec<Vec<[f64; 4]>>,
}

impl ClassBuckets {
    fn new(layout: &Layout) -> Self {
        let n = layout.elements.iter().map(|e| e.cls.index() + 1).max().unwrap_or(0);
        let mut buckets = vec![Vec::new(); n];
        for e in &layout.elements {
            buckets[e.cls.index()].push(element_feature(e));
        }
        Self { buckets }
    }

    fn nearest(&self, e: &Element) -> f64 {
        let f = element_feature(e);
        match self.buckets.get(e.cls.index()) {
            Some(b) if !b.is_empty() => b.iter().map(|g| feature_dist(&f, g)).fold(f64::INFINITY, f64::min),
            _ => LAMBDA_MISS,
        }
    }
}

fn one_way(a: &Layout, b: &ClassBuckets) -> f64 {
    a.elements.iter().map(|e| b.nearest(e)).sum::<f64>() / a.len() as f64
}

/// Symmetric mean nearest-neighbour distance with same-class matching.
pub fn chamfer_distance(a: &Layout, b: &Layout) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("chamfer distance needs two non-empty layouts".into()));
    }
    Ok(one_way(a, &ClassBuckets::new(b)) + one_way(b, &ClassBuckets::new(a)))
}

/// Mean Chamfer distance over all unordered pairs; 0 for fewer than two layouts.
pub fn mean_pairwise_chamfer(layouts: &[Layout]) -> Result<f64> {
    let n = layouts.len();
    if n < 2 {
        return Ok(0.0);
    }
    let buckets: Vec<ClassBuckets> = layouts.iter().map(ClassBuckets::new).collect();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            if layouts[i].is_empty() || layouts[j].is_empty() {
                return Err(Error::Empty(format!("layout {} is empty", if layouts[i].is_empty() { i } else { j })));
            }
            total += one_way(&layouts[i], &buckets[j]) + one_way(&layouts[j], &buckets[i]);
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{BBox, BUTTON, IMAGE};

    #[test]
    fn shifted_button() {
        let a = Layout::new(vec![Element::new(BUTTON, BBox::new(0.1, 0.1, 0.3, 0.2))]);
        let b = Layout::new(vec![Element::new(BUTTON, BBox::new(0.2, 0.1, 0.4, 0.2))]);
        assert!((chamfer_distance(&a, &b).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn class_mismatch_costs_two_misses() {
        let x = BBox::new(0.1, 0.1, 0.3, 0.2);
        let a = Layout::new(vec![Element::new(BUTTON, x)]);
        let b = Layout::new(vec![Element::new(IMAGE, x)]);
        assert_eq!(chamfer_distance(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn empty_is_an_error() {
        let a = Layout::new(vec![Element::new(BUTTON, BBox::new(0.1, 0.1, 0.3, 0.2))]);
        assert!(chamfer_distance(&a, &Layout::default()).is_err());
    }

    #[test]
    fn pairwise_mean_of_two_is_the_distance() {
        let a = Layout::new(vec![Element::new(BUTTON, BBox::new(0.1, 0.1, 0.3, 0.2))]);
        let b = Layout::new(vec![Element::new(BUTTON, BBox::new(0.2, 0.1, 0.4, 0.2))]);
        let d = chamfer_distance(&a, &b).unwrap();
        assert_eq!(mean_pairwise_chamfer(&[a.clone(), b]).unwrap(), d);
        assert_eq!(mean_pairwise_chamfer(&[a]).unwrap(), 0.0);
    }
}
