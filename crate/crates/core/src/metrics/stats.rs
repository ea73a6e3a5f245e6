use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::layout::{ElementClass, Layout};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// 1-based ranks, ties receive their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Sample skewness (biased moment estimator).
pub fn skewness(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let n = xs.len() as f64;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    if m2 == 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassDistribution {
    pub histogram: BTreeMap<ElementClass, usize>,
    pub layouts: usize,
    pub mean_count: f64,
    pub sd_count: f64,
}

impl ClassDistribution {
    pub fn total(&self) -> usize {
        self.histogram.values().sum()
    }
}

pub fn class_distribution(layouts: &[Layout]) -> Result<ClassDistribution> {
    if layouts.is_empty() {
        return Err(Error::Empty("class distribution of zero layouts".into()));
    }
    let mut histogram = BTreeMap::new();
    for l in layouts {
        for e in &l.elements {
            *histogram.entry(e.cls).or_insert(0) += 1;
        }
    }
    let counts: Vec<f64> = layouts.iter().map(|l| l.len() as f64).collect();
    Ok(ClassDistribution { histogram, layouts: layouts.len(), mean_count: mean(&counts), sd_count: std_dev(&counts) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{BBox, Element, BUTTON};

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn spearman_is_one_for_monotone_maps() {
        let a = [0.1, 0.5, 0.2, 0.9, 0.4];
        let b: Vec<f64> = a.iter().map(|x: &f64| x.powi(3) + 7.0).collect();
        assert!((spearman(&a, &b) - 1.0).abs() < 1e-12);
        let c: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((spearman(&a, &c) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_buttons() {
        let l = Layout::new(vec![Element::new(BUTTON, BBox::new(0.0, 0.0, 0.1, 0.1)); 3]);
        let d = class_distribution(&[l]).unwrap();
        assert_eq!(d.histogram.get(&BUTTON), Some(&3));
        assert_eq!(d.histogram.len(), 1);
        assert_eq!((d.mean_count, d.sd_count), (3.0, 0.0));
        assert!(class_distribution(&[]).is_err());
    }
}
