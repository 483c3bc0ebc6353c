//! Image quality metrics: PSNR, SSIM, and the Fréchet feature distance.

pub mod evaluate;
pub mod features;
pub mod frechet;

pub use evaluate::{evaluate, sweep_t_eval, DiffusionUpscaler, EvalConfig, Upscaler};
pub use features::{extract_features, FeatureExtractor};
pub use frechet::{frechet_distance, GaussianStats};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;
use serde::{Deserialize, Serialize};

/// PSNR/SSIM/Fréchet summary for one evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub psnr_mean: f64,
    pub ssim_mean: f64,
    pub frechet: f64,
    pub n_pairs: usize,
    pub t_eval: f64,
}

/// PSNR values are capped at this to keep zero-MSE pairs finite.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Peak signal-to-noise ratio in dB for unit-domain images:
/// 10·log10(1/MSE), capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "psnr shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut acc = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = (x - y) as f64;
        acc += d * d;
    }
    let mse = acc / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn ssim_window_weights() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0f64; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            let v = (-(dy * dy + dx * dx) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Structural similarity: 11×11 Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03, L = 1, averaged over valid window positions and channels.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "ssim shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (h, w, ch) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let weights = ssim_window_weights();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0f64;
    let mut count = 0usize;
    for c in 0..ch {
        for wy in 0..=(h - SSIM_WINDOW) {
            for wx in 0..=(w - SSIM_WINDOW) {
                let (mut mu_a, mut mu_b) = (0.0f64, 0.0f64);
                let (mut aa, mut bb, mut ab) = (0.0f64, 0.0f64, 0.0f64);
                for ky in 0..SSIM_WINDOW {
                    for kx in 0..SSIM_WINDOW {
                        let wt = weights[ky * SSIM_WINDOW + kx];
                        let va = a.at(wy + ky, wx + kx, c) as f64;
                        let vb = b.at(wy + ky, wx + kx, c) as f64;
                        mu_a += wt * va;
                        mu_b += wt * vb;
                        aa += wt * va * va;
                        bb += wt * vb * vb;
                        ab += wt * va * vb;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                total += s;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::Prng;
    use crate::tensor::ValueDomain;

    fn random_unit(h: usize, w: usize, ch: usize, seed: u64) -> ImageTensor {
        let mut p = Prng::from_seed(seed);
        let mut t = ImageTensor::zeros(h, w, ch, ValueDomain::Unit);
        for v in t.data_mut() {
            *v = p.uniform() as f32;
        }
        t
    }

    #[test]
    fn psnr_identical_hits_cap() {
        let a = random_unit(8, 8, 3, 1);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_constant_offset_exact() {
        // MSE = 0.01 → exactly 20 dB.
        let a = ImageTensor::constant(16, 16, 1, ValueDomain::Unit, 0.3);
        let b = ImageTensor::constant(16, 16, 1, ValueDomain::Unit, 0.4);
        let v = psnr(&a, &b).unwrap();
        assert!((v - 20.0).abs() < 1e-5, "{v}");
    }

    #[test]
    fn psnr_matches_brute_force() {
        let a = random_unit(12, 9, 3, 2);
        let b = random_unit(12, 9, 3, 3);
        // two-line oracle
        let mse: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            / a.len() as f64;
        let oracle = 10.0 * (1.0 / mse).log10();
        assert!((psnr(&a, &b).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn psnr_shape_mismatch() {
        let a = random_unit(8, 8, 1, 1);
        let b = random_unit(8, 9, 1, 1);
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn psnr_monotone_in_noise() {
        let a = random_unit(16, 16, 3, 4);
        let mut p = Prng::from_seed(5);
        let mut small = a.clone();
        let mut large = a.clone();
        for i in 0..a.len() {
            let n = p.normal() as f32;
            small.data_mut()[i] = (a.data()[i] + 0.01 * n).clamp(0.0, 1.0);
            large.data_mut()[i] = (a.data()[i] + 0.1 * n).clamp(0.0, 1.0);
        }
        assert!(psnr(&a, &small).unwrap() > psnr(&a, &large).unwrap());
        assert!(ssim(&a, &small).unwrap() > ssim(&a, &large).unwrap());
    }

    #[test]
    fn ssim_self_is_one() {
        let a = random_unit(16, 16, 3, 6);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_symmetric() {
        let a = random_unit(14, 14, 1, 7);
        let b = random_unit(14, 14, 1, 8);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_images_analytic() {
        // a ≡ 0, b ≡ 1: variances vanish, so SSIM = C1/(1+C1) exactly.
        let a = ImageTensor::constant(11, 11, 1, ValueDomain::Unit, 0.0);
        let b = ImageTensor::constant(11, 11, 1, ValueDomain::Unit, 1.0);
        let c1 = 0.01f64.powi(2);
        let expect = c1 / (1.0 + c1);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn ssim_window_size_enforced() {
        let a = random_unit(10, 16, 1, 9);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn ssim_in_valid_range() {
        let a = random_unit(16, 20, 3, 10);
        let b = random_unit(16, 20, 3, 11);
        let v = ssim(&a, &b).unwrap();
        assert!((-1.0..=1.0).contains(&v));
    }
}
