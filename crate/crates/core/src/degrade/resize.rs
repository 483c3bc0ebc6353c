//! Area, bilinear and bicubic resampling as separable 1-D passes.
//!
//! Bilinear and bicubic use pixel-center alignment (src = (dst+0.5)·r −
//! 0.5) with edge clamping; area averaging weights each source pixel by
//! its exact fractional coverage of the destination cell. Bicubic is the
//! Keys kernel with a = −0.5.

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, ValueDomain};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMode {
    Area,
    Bilinear,
    Bicubic,
}

/// Keys cubic kernel, a = −0.5.
fn keys(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x < 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Per-destination-index source taps: (first source index, weights).
fn axis_weights(src_n: usize, dst_n: usize, mode: ResizeMode) -> Vec<(usize, Vec<f64>)> {
    let ratio = src_n as f64 / dst_n as f64;
    let mut out = Vec::with_capacity(dst_n);
    match mode {
        ResizeMode::Area => {
            for i in 0..dst_n {
                let lo = i as f64 * ratio;
                let hi = (i + 1) as f64 * ratio;
                let first = lo.floor() as usize;
                let last = (hi.ceil() as usize).min(src_n).max(first + 1);
                let mut weights = Vec::with_capacity(last - first);
                for s in first..last {
                    let cover = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                    weights.push(cover);
                }
                let total: f64 = weights.iter().sum();
                for w in &mut weights {
                    *w /= total;
                }
                out.push((first, weights));
            }
        }
        ResizeMode::Bilinear | ResizeMode::Bicubic => {
            let taps = if mode == ResizeMode::Bilinear { 1 } else { 2 };
            for i in 0..dst_n {
                let center = (i as f64 + 0.5) * ratio - 0.5;
                let base = center.floor() as isize;
                let frac = center - base as f64;
                let mut idx = Vec::new();
                let mut weights = Vec::new();
                for k in (1 - taps)..=taps {
                    let w = if mode == ResizeMode::Bilinear {
                        let d = (k as f64 - frac).abs();
                        (1.0 - d).max(0.0)
                    } else {
                        keys(k as f64 - frac)
                    };
                    idx.push((base + k).clamp(0, src_n as isize - 1) as usize);
                    weights.push(w);
                }
                // Edge clamping merges duplicate taps; fold them so the
                // stored range is contiguous.
                let first = *idx.iter().min().unwrap();
                let last = *idx.iter().max().unwrap();
                let mut folded = vec![0.0; last - first + 1];
                for (s, w) in idx.iter().zip(&weights) {
                    folded[s - first] += w;
                }
                let total: f64 = folded.iter().sum();
                for w in &mut folded {
                    *w /= total;
                }
                out.push((first, folded));
            }
        }
    }
    out
}

fn resample_rows(
    data: &[f32],
    src_h: usize,
    w: usize,
    ch: usize,
    taps: &[(usize, Vec<f64>)],
) -> Vec<f32> {
    let dst_h = taps.len();
    let mut out = vec![0.0f32; dst_h * w * ch];
    let row = w * ch;
    for (dy, (first, weights)) in taps.iter().enumerate() {
        for x in 0..row {
            let mut acc = 0.0f64;
            for (k, wt) in weights.iter().enumerate() {
                let sy = (first + k).min(src_h - 1);
                acc += wt * data[sy * row + x] as f64;
            }
            out[dy * row + x] = acc as f32;
        }
    }
    out
}

fn resample_cols(
    data: &[f32],
    h: usize,
    src_w: usize,
    ch: usize,
    taps: &[(usize, Vec<f64>)],
) -> Vec<f32> {
    let dst_w = taps.len();
    let mut out = vec![0.0f32; h * dst_w * ch];
    for y in 0..h {
        for (dx, (first, weights)) in taps.iter().enumerate() {
            for c in 0..ch {
                let mut acc = 0.0f64;
                for (k, wt) in weights.iter().enumerate() {
                    let sx = (first + k).min(src_w - 1);
                    acc += wt * data[(y * src_w + sx) * ch + c] as f64;
                }
                out[(y * dst_w + dx) * ch + c] = acc as f32;
            }
        }
    }
    out
}

/// Resizes to exact target dims.
pub fn resize_to(img: &ImageTensor, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<ImageTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize target dims must be positive"));
    }
    let (h, w, ch) = img.shape();
    let rows = resample_rows(img.data(), h, w, ch, &axis_weights(h, out_h, mode));
    let cols = resample_cols(&rows, out_h, w, ch, &axis_weights(w, out_w, mode));
    let t = ImageTensor::from_data(out_h, out_w, ch, ValueDomain::Latent, cols)?;
    Ok(match img.domain() {
        ValueDomain::Unit => t.into_unit(),
        ValueDomain::Latent => t,
    })
}

/// Resizes by a scale factor; output dims are round(scale·dim).
pub fn resize_scale(img: &ImageTensor, scale: f64, mode: ResizeMode) -> Result<ImageTensor> {
    if !(scale > 0.0) {
        return Err(Error::invalid(format!("scale must be positive, got {scale}")));
    }
    let out_h = (img.height() as f64 * scale).round() as usize;
    let out_w = (img.width() as f64 * scale).round() as usize;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!(
            "scale {scale} collapses {}x{} to a zero dim",
            img.height(),
            img.width()
        )));
    }
    resize_to(img, out_h, out_w, mode)
}
