use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Mean and covariance of a feature sample.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianSummary {
    /// Unbiased covariance; with fewer than `dim + 1` samples the diagonal is
    /// lifted by `1e-6`.
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        let n = features.len();
        if n < 2 {
            return Err(Error::Parameter("a Gaussian summary needs at least two samples".into()));
        }
        let dim = features[0].len();
        if features.iter().any(|f| f.len() != dim) {
            return Err(Error::shape("feature vectors differ in length"));
        }
        let mut mean = DVector::zeros(dim);
        for f in features {
            mean += DVector::from_column_slice(f);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(dim, dim);
        for f in features {
            let c = DVector::from_column_slice(f) - &mean;
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
        if n < dim + 1 {
            cov += DMatrix::identity(dim, dim) * 1e-6;
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Frechet distance `|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2))`.
///
/// The trace of `(S1 S2)^(1/2)` is taken from the eigenvalues of the
/// symmetric product `S1^(1/2) S2 S1^(1/2)`, clamped at zero.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("feature widths {} and {} differ", a.dim(), b.dim())));
    }
    let dm = (&a.mean - &b.mean).norm_squared();
    let s1 = symmetric_sqrt(&a.cov);
    let prod = &s1 * &b.cov * &s1;
    let prod = (&prod + prod.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(prod).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    Ok((dm + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt).max(0.0))
}

pub fn fid(generated: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    frechet_distance(&GaussianSummary::fit(generated)?, &GaussianSummary::fit(reference)?)
}

/// Mean Euclidean distance over all unordered pairs.
pub fn diversity(features: &[Vec<f64>]) -> Result<f64> {
    let n = features.len();
    if n < 2 {
        return Err(Error::Parameter("diversity needs at least two clips".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            if features[i].len() != features[j].len() {
                return Err(Error::shape("feature vectors differ in length"));
            }
            total += features[i]
                .iter()
                .zip(&features[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}
