use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{mean, std_dev};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    Identity,
    /// `log(1 + x)` before standardising.
    Log1p,
}

/// Frozen z-score statistics of a regression target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub transform: TargetTransform,
    pub mean: f64,
    pub sd: f64,
}

impl Normalizer {
    pub fn apply(&self, raw: f64) -> f64 {
        (self.transformed(raw) - self.mean) / self.sd
    }

    fn transformed(&self, raw: f64) -> f64 {
        match self.transform {
            TargetTransform::Identity => raw,
            TargetTransform::Log1p => raw.ln_1p(),
        }
    }

    /// Inverse of [`Normalizer::apply`].
    pub fn invert(&self, normalized: f64) -> f64 {
        let x = normalized * self.sd + self.mean;
        match self.transform {
            TargetTransform::Identity => x,
            TargetTransform::Log1p => x.exp_m1(),
        }
    }
}

/// Fits z-score statistics (population sd) of the transformed targets.
pub fn fit_normalizer(targets: &[f64], transform: TargetTransform) -> Result<Normalizer> {
    if let Some(bad) = targets.iter().find(|t| !t.is_finite() || **t < 0.0) {
        return Err(Error::Numerical(format!("effort targets must be finite and non-negative, got {bad}")));
    }
    let probe = Normalizer { transform, mean: 0.0, sd: 1.0 };
    let xs: Vec<f64> = targets.iter().map(|&t| probe.transformed(t)).collect();
    let sd = std_dev(&xs);
    if xs.len() < 2 || !(sd > 0.0) {
        return Err(Error::Numerical("targets need at least two distinct values".into()));
    }
    Ok(Normalizer { transform, mean: mean(&xs), sd })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::skewness;

    #[test]
    fn two_point_targets() {
        let n = fit_normalizer(&[0.0, 2.0], TargetTransform::Identity).unwrap();
        assert_eq!((n.mean, n.sd), (1.0, 1.0));
        assert_eq!((n.apply(0.0), n.apply(2.0)), (-1.0, 1.0));
    }

    #[test]
    fn normalized_targets_have_zero_mean() {
        let raw: Vec<f64> = (0..97).map(|i| (i as f64 * 0.37).sin().abs() * 40.0 + i as f64).collect();
        for tr in [TargetTransform::Identity, TargetTransform::Log1p] {
            let n = fit_normalizer(&raw, tr).unwrap();
            let z: Vec<f64> = raw.iter().map(|&x| n.apply(x)).collect();
            assert!(mean(&z).abs() < 1e-6);
            assert!((std_dev(&z) - 1.0).abs() < 1e-9);
            for &x in &raw {
                assert!((n.invert(n.apply(x)) - x).abs() < 1e-9 * (1.0 + x));
            }
        }
    }

    #[test]
    fn degenerate_targets_are_rejected() {
        assert!(fit_normalizer(&[3.0, 3.0, 3.0], TargetTransform::Identity).is_err());
        assert!(fit_normalizer(&[1.0], TargetTransform::Log1p).is_err());
        assert!(fit_normalizer(&[1.0, f64::NAN], TargetTransform::Identity).is_err());
    }

    #[test]
    fn log_transform_reduces_skew_of_wide_targets() {
        let raw: Vec<f64> = (0..300).map(|i| 10f64.powf(i as f64 / 100.0)).collect();
        let logged: Vec<f64> = raw.iter().map(|x| x.ln_1p()).collect();
        assert!(skewness(&logged).abs() < skewness(&raw).abs());
    }
}
