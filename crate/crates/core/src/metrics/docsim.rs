use crate::error::{Error, Result};
use crate::layout::{Element, Layout};

/// Pair weight; zero across classes.
pub fn docsim_weight(a: &Element, b: &Element) -> f64 {
    if a.cls != b.cls {
        return 0.0;
    }
    let (ax, ay) = a.bbox.center();
    let (bx, by) = b.bbox.center();
    let dc = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt();
    let ds = (a.bbox.width() - b.bbox.width()).abs() + (a.bbox.height() - b.bbox.height()).abs();
    a.bbox.area().min(b.bbox.area()).sqrt() * (-dc - 2.0 * ds).exp2()
}

/// Maximum-weight matching normalised by the larger cardinality.
pub fn docsim(a: &Layout, b: &Layout) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("docsim needs two non-empty layouts".into()));
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let w: Vec<Vec<f64>> = small.elements.iter().map(|e| large.elements.iter().map(|f| docsim_weight(e, f)).collect()).collect();
    let assignment = max_weight_assignment(&w);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| w[i][j]).sum();
    Ok(total / large.len() as f64)
}

/// Hungarian algorithm on an `n x m` weight matrix with `n <= m`; returns
/// the column assigned to each row, maximising total weight.
pub fn max_weight_assignment(w: &[Vec<f64>]) -> Vec<usize> {
    let n = w.len();
    if n == 0 {
        return Vec::new();
    }
    let m = w[0].len();
    assert!(n <= m, "assignment needs rows <= columns");
    let max = w.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let cost = |i: usize, j: usize| max - w[i][j];

    // 1-based potentials; p[j] is the row matched to column j.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{BBox, BUTTON, IMAGE, LABEL};

    #[test]
    fn self_similarity_is_mean_sqrt_area() {
        let a = Layout::new(vec![Element::new(BUTTON, BBox::new(0.0, 0.0, 0.5, 0.5)), Element::new(LABEL, BBox::new(0.1, 0.6, 0.3, 0.7))]);
        let expected = (0.25f64.sqrt() + 0.02f64.sqrt()) / 2.0;
        assert!((docsim(&a, &a).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn disjoint_classes_score_zero() {
        let a = Layout::new(vec![Element::new(BUTTON, BBox::new(0.0, 0.0, 0.5, 0.5))]);
        let b = Layout::new(vec![Element::new(IMAGE, BBox::new(0.0, 0.0, 0.5, 0.5))]);
        assert_eq!(docsim(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn assignment_prefers_the_heavy_diagonal() {
        let w = vec![vec![1.0, 5.0, 0.0], vec![4.0, 1.0, 0.0]];
        assert_eq!(max_weight_assignment(&w), vec![1, 0]);
    }
}
