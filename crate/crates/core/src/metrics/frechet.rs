//! Fréchet distance between Gaussians fitted to feature sets:
//! ‖μ₁−μ₂‖² + Tr(Σ₁+Σ₂−2(Σ₁Σ₂)^{1/2}).
//!
//! The matrix square root is taken through the PSD similarity form
//! √Σ₂·Σ₁·√Σ₂ (same trace as (Σ₁Σ₂)^{1/2}), with inputs symmetrized and
//! negative eigenvalues clipped to zero.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Mean and covariance of one feature set. Covariance is sample
/// covariance (n−1 denominator), row-major d×d.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    pub dim: usize,
}

impl GaussianStats {
    /// Fits mean/covariance from an n×d feature matrix (row per sample).
    pub fn fit(features: &[Vec<f64>]) -> Result<GaussianStats> {
        let n = features.len();
        if n < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 feature rows to fit covariance, got {n}"
            )));
        }
        let dim = features[0].len();
        if features.iter().any(|f| f.len() != dim) {
            return Err(Error::invalid("feature rows have inconsistent dims"));
        }
        let mut mean = vec![0.0f64; dim];
        for row in features {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = vec![0.0f64; dim * dim];
        for row in features {
            for i in 0..dim {
                let di = row[i] - mean[i];
                for j in i..dim {
                    cov[i * dim + j] += di * (row[j] - mean[j]);
                }
            }
        }
        let denom = (n - 1) as f64;
        for i in 0..dim {
            for j in i..dim {
                let v = cov[i * dim + j] / denom;
                cov[i * dim + j] = v;
                cov[j * dim + i] = v;
            }
        }
        Ok(GaussianStats { mean, cov, dim })
    }
}

fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// PSD square root via symmetric eigendecomposition with negative
/// eigenvalues clipped to zero.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrized(m).symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::invalid(format!(
            "gaussian dims differ: {} vs {}",
            a.dim, b.dim
        )));
    }
    let d = a.dim;
    if a.cov.len() != d * d || b.cov.len() != d * d || a.mean.len() != d || b.mean.len() != d {
        return Err(Error::invalid("covariance must be square and match mean dim"));
    }
    let s1 = symmetrized(&DMatrix::from_row_slice(d, d, &a.cov));
    let s2 = symmetrized(&DMatrix::from_row_slice(d, d, &b.cov));
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let root2 = sqrt_psd(&s2);
    let inner = symmetrized(&(&root2 * &s1 * &root2));
    let tr_sqrt: f64 = inner
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    let dist = mean_term + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
    Ok(dist.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::Prng;

    fn identity_stats(dim: usize, mean: f64, var: f64) -> GaussianStats {
        let mut cov = vec![0.0; dim * dim];
        for i in 0..dim {
            cov[i * dim + i] = var;
        }
        GaussianStats {
            mean: vec![mean; dim],
            cov,
            dim,
        }
    }

    #[test]
    fn identical_gaussians_zero() {
        let mut p = Prng::from_seed(1);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..6).map(|_| p.normal()).collect())
            .collect();
        let g = GaussianStats::fit(&rows).unwrap();
        let d = frechet_distance(&g, &g).unwrap();
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn shifted_identity_covariance_is_mean_norm() {
        // Σ₁ = Σ₂ = I: trace term cancels, distance = ‖v‖².
        let a = identity_stats(5, 0.0, 1.0);
        let mut b = identity_stats(5, 0.0, 1.0);
        b.mean = vec![1.0, -2.0, 0.5, 0.0, 3.0];
        let v2: f64 = b.mean.iter().map(|v| v * v).sum();
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - v2).abs() < 1e-6, "{d} vs {v2}");
    }

    #[test]
    fn isotropic_covariances_analytic() {
        // Σ₁ = aI, Σ₂ = bI, equal means: distance = d·(√a−√b)².
        let dim = 7;
        let (a, b) = (2.5f64, 0.7f64);
        let ga = identity_stats(dim, 0.3, a);
        let gb = identity_stats(dim, 0.3, b);
        let expect = dim as f64 * (a.sqrt() - b.sqrt()).powi(2);
        let d = frechet_distance(&ga, &gb).unwrap();
        assert!((d - expect).abs() < 1e-6, "{d} vs {expect}");
    }

    #[test]
    fn symmetric_in_arguments() {
        let mut p = Prng::from_seed(2);
        let rows_a: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..8).map(|_| p.normal()).collect())
            .collect();
        let rows_b: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..8).map(|_| 0.5 * p.normal() + 0.2).collect())
            .collect();
        let ga = GaussianStats::fit(&rows_a).unwrap();
        let gb = GaussianStats::fit(&rows_b).unwrap();
        let ab = frechet_distance(&ga, &gb).unwrap();
        let ba = frechet_distance(&gb, &ga).unwrap();
        assert!((ab - ba).abs() < 1e-6);
        assert!(ab > 0.0);
    }

    #[test]
    fn dim_mismatch_rejected() {
        let a = identity_stats(4, 0.0, 1.0);
        let b = identity_stats(5, 0.0, 1.0);
        assert!(frechet_distance(&a, &b).is_err());
    }
}
