use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const PSD_TOL: f64 = 1e-8;

/// Mean and sample covariance of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl FeatureGaussian {
    /// Needs at least `2 * dim` samples of equal dimension.
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        let dim = features.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::Empty("no features to fit".into()));
        }
        if features.len() < 2 * dim {
            return Err(Error::Config(format!("{} samples cannot fit a {dim}-dim Gaussian (need {})", features.len(), 2 * dim)));
        }
        let n = features.len();
        let mut mean = DVector::zeros(dim);
        for f in features {
            if f.len() != dim {
                return Err(Error::Config("feature dimensions differ".into()));
            }
            mean += DVector::from_column_slice(f);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(dim, dim);
        for f in features {
            let d = DVector::from_column_slice(f) - &mean;
            cov.ger(1.0, &d, &d, 1.0);
        }
        cov /= (n - 1) as f64;
        Ok(Self { mean, cov, count: n })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn symmetric_eigen(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lo = eig.eigenvalues.min();
    if lo < -PSD_TOL {
        let hi = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let small = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        return Err(Error::Numerical(format!(
            "{what} is not positive semi-definite (min eigenvalue {lo:.3e}, condition number {:.3e})",
            hi / small.max(f64::MIN_POSITIVE)
        )));
    }
    Ok(eig)
}

fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = symmetric_eigen(m, what)?;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Fréchet distance between two Gaussians. `Tr((Σp Σq)^{1/2})` is taken
/// through the similar symmetric matrix `Σp^{1/2} Σq Σp^{1/2}`.
pub fn fid(p: &FeatureGaussian, q: &FeatureGaussian) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Config(format!("feature dims differ: {} vs {}", p.dim(), q.dim())));
    }
    let diff = (&p.mean - &q.mean).norm_squared();
    let sp = psd_sqrt(&p.cov, "first covariance")?;
    let inner = &sp * &q.cov * &sp;
    let eig = symmetric_eigen(&inner, "covariance product")?;
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let value = diff + p.cov.trace() + q.cov.trace() - 2.0 * tr_sqrt;
    if value < -1e-6 {
        return Err(Error::Numerical(format!("negative FID {value:.3e}")));
    }
    Ok(value.max(0.0))
}

/// Convenience: fit both sides then compare.
pub fn fid_from_features(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    fid(&FeatureGaussian::fit(a)?, &FeatureGaussian::fit(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(mean: Vec<f64>, cov: DMatrix<f64>) -> FeatureGaussian {
        FeatureGaussian { mean: DVector::from_vec(mean), cov, count: 100 }
    }

    #[test]
    fn identity_covariances_give_squared_shift() {
        let p = gaussian(vec![0.0, 0.0, 0.0], DMatrix::identity(3, 3));
        let q = gaussian(vec![1.0, -2.0, 0.5], DMatrix::identity(3, 3));
        assert!((fid(&p, &q).unwrap() - 5.25).abs() < 1e-10);
        assert!(fid(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn diagonal_case_matches_closed_form() {
        let p = gaussian(vec![0.0, 0.0], DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])));
        let q = gaussian(vec![0.0, 0.0], DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 9.0])));
        // (2-1)^2 + (1-3)^2
        assert!((fid(&p, &q).unwrap() - 5.0).abs() < 1e-10);
    }

    #[test]
    fn indefinite_covariance_reports_condition_number() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let p = gaussian(vec![0.0, 0.0], bad);
        let q = gaussian(vec![0.0, 0.0], DMatrix::identity(2, 2));
        let msg = fid(&p, &q).unwrap_err().to_string();
        assert!(msg.contains("condition number"), "{msg}");
    }

    #[test]
    fn too_few_samples_rejected() {
        let feats = vec![vec![0.0, 1.0, 2.0]; 5];
        assert!(FeatureGaussian::fit(&feats).is_err());
    }
}
