//! Frozen random-convolution feature extractor.
//!
//! A desk-scale stand-in for pretrained embedding networks: three seeded
//! stride-2 conv layers with ReLU, globally average-pooled to
//! `feature_dim`. Deterministic given (seed, feature_dim, input channels),
//! and the same extractor must be used for sample and reference sets.

use crate::error::{Error, Result};
use crate::io::read_tensor;
use crate::prng::Prng;
use crate::tensor::ImageTensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    FixedRandomConv,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub kind: ExtractorKind,
    pub seed: u64,
    pub feature_dim: usize,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self {
            kind: ExtractorKind::FixedRandomConv,
            seed: 0x5eed_fea7,
            feature_dim: 64,
        }
    }
}

struct ConvLayer {
    in_ch: usize,
    out_ch: usize,
    // [out_ch][in_ch][3][3]
    weights: Vec<f32>,
}

impl ConvLayer {
    fn seeded(prng: &mut Prng, in_ch: usize, out_ch: usize) -> ConvLayer {
        let fan_in = (in_ch * 9) as f64;
        let scale = (2.0 / fan_in).sqrt();
        let weights = (0..out_ch * in_ch * 9)
            .map(|_| (prng.normal() * scale) as f32)
            .collect();
        ConvLayer {
            in_ch,
            out_ch,
            weights,
        }
    }

    /// Stride-2 conv, zero padding 1, ReLU. Input/output are CHW planes.
    fn apply(&self, input: &[f32], h: usize, w: usize) -> (Vec<f32>, usize, usize) {
        let oh = h.div_ceil(2);
        let ow = w.div_ceil(2);
        let mut out = vec![0.0f32; self.out_ch * oh * ow];
        for oc in 0..self.out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    for ic in 0..self.in_ch {
                        for ky in 0..3usize {
                            let sy = (2 * oy + ky) as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..3usize {
                                let sx = (2 * ox + kx) as isize - 1;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                let wv = self.weights[((oc * self.in_ch + ic) * 3 + ky) * 3 + kx];
                                acc += wv * input[(ic * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(oc * oh + oy) * ow + ox] = acc.max(0.0);
                }
            }
        }
        (out, oh, ow)
    }
}

fn build_stack(seed: u64, in_ch: usize, feature_dim: usize) -> Vec<ConvLayer> {
    let mut prng = Prng::new(seed, 0xfea7);
    vec![
        ConvLayer::seeded(&mut prng, in_ch, 16),
        ConvLayer::seeded(&mut prng, 16, 32),
        ConvLayer::seeded(&mut prng, 32, feature_dim),
    ]
}

fn features_of(image: &ImageTensor, stack: &[ConvLayer]) -> Vec<f64> {
    let (h, w, ch) = image.shape();
    // HWC → CHW
    let mut cur = vec![0.0f32; ch * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                cur[(c * h + y) * w + x] = image.at(y, x, c);
            }
        }
    }
    let (mut hh, mut ww) = (h, w);
    for layer in stack {
        let (next, nh, nw) = layer.apply(&cur, hh, ww);
        cur = next;
        hh = nh;
        ww = nw;
    }
    let dim = stack.last().map(|l| l.out_ch).unwrap_or(ch);
    let plane = hh * ww;
    (0..dim)
        .map(|c| cur[c * plane..(c + 1) * plane].iter().map(|&v| v as f64).sum::<f64>() / plane as f64)
        .collect()
}

/// Extracts an n×feature_dim matrix. All images must share dims and
/// channel count.
pub fn extract_features(images: &[ImageTensor], ex: &FeatureExtractor) -> Result<Vec<Vec<f64>>> {
    if ex.kind == ExtractorKind::External {
        return Err(Error::invalid(
            "external features are supplied as a TensorFile; use load_feature_file",
        ));
    }
    let Some(first) = images.first() else {
        return Ok(Vec::new());
    };
    if images.iter().any(|i| !i.same_shape(first)) {
        return Err(Error::invalid("feature extraction needs consistent image dims"));
    }
    let stack = build_stack(ex.seed, first.channels(), ex.feature_dim);
    Ok(images.iter().map(|img| features_of(img, &stack)).collect())
}

/// Loads an externally computed n×d feature matrix stored as a TensorFile
/// with dims (n, d, 1).
pub fn load_feature_file(path: &Path) -> Result<Vec<Vec<f64>>> {
    let t = read_tensor(path)?;
    let (n, d, c) = t.shape();
    if c != 1 {
        return Err(Error::invalid("feature file must have dims (n, d, 1)"));
    }
    Ok((0..n)
        .map(|i| (0..d).map(|j| t.data()[i * d + j] as f64).collect())
        .collect())
}
