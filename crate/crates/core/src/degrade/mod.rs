//! Two-stage parametric degradation pipeline.
//!
//! Stage 1: blur → resize (scale in [0.15, 1.5]) → JPEG. Stage 2: blur
//! (present with probability 0.8) → resize (scale in [0.3, 1.2]) → a sinc
//! filter and JPEG in random order. A final bicubic resize brings the
//! image to HR dims ÷ magnification. There is no additive-noise step;
//! noise-conditioning augmentation covers that role downstream.
//!
//! Every sampled parameter lands in a [`DegradationTrace`]; replaying a
//! trace on the same HR input reproduces the LR output bit-exactly.

pub mod convolve;
pub mod jpeg;
pub mod kernel;
pub mod resize;

pub use convolve::convolve;
pub use jpeg::jpeg_artifacts;
pub use kernel::{render_kernel, sample_blur_spec, BlurFamily, BlurKernelSpec, Kernel};
pub use resize::{resize_scale, resize_to, ResizeMode};

use crate::error::{Error, Result};
use crate::prng::Prng;
use crate::tensor::ImageTensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradeConfig {
    pub magnification: usize,
    pub second_blur_prob: f64,
    pub stage1_scale: (f64, f64),
    pub stage2_scale: (f64, f64),
    pub jpeg_quality: (u8, u8),
    pub chroma_subsampling: bool,
    /// Intermediate dims never drop below this, so every sampled blur
    /// kernel stays applicable. Inactive at the paper's 400×400 crop
    /// scale; binds only for small desk-scale crops.
    pub min_intermediate_dim: usize,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        Self {
            magnification: 4,
            second_blur_prob: 0.8,
            stage1_scale: (0.15, 1.5),
            stage2_scale: (0.3, 1.2),
            jpeg_quality: (30, 95),
            chroma_subsampling: true,
            min_intermediate_dim: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResizeStep {
    pub mode: ResizeMode,
    pub scale: f64,
    /// Output dims actually applied (records the min-dim floor).
    pub out_h: usize,
    pub out_w: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SincPosition {
    BeforeJpeg,
    AfterJpeg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOneTrace {
    pub blur: BlurKernelSpec,
    pub resize: ResizeStep,
    pub jpeg_quality: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTwoTrace {
    pub blur: Option<BlurKernelSpec>,
    pub resize: ResizeStep,
    pub sinc: BlurKernelSpec,
    pub sinc_position: SincPosition,
    pub jpeg_quality: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationTrace {
    pub stage1: StageOneTrace,
    pub stage2: StageTwoTrace,
    /// Final bicubic resize to HR ÷ magnification.
    pub final_target: (usize, usize),
    pub chroma_subsampling: bool,
}

fn check_hr(hr: &ImageTensor, cfg: &DegradeConfig) -> Result<()> {
    let mag = cfg.magnification;
    let (h, w, _) = hr.shape();
    if h % mag != 0 || w % mag != 0 {
        return Err(Error::invalid(format!(
            "hr dims {h}x{w} must be divisible by magnification {mag}"
        )));
    }
    if h < 8 * mag || w < 8 * mag {
        return Err(Error::invalid(format!(
            "hr dims {h}x{w} smaller than 8x magnification ({})",
            8 * mag
        )));
    }
    Ok(())
}

fn floored_dims(h: usize, w: usize, scale: f64, floor: usize) -> (usize, usize) {
    let oh = ((h as f64 * scale).round() as usize).max(floor);
    let ow = ((w as f64 * scale).round() as usize).max(floor);
    (oh, ow)
}

fn sample_quality(prng: &mut Prng, range: (u8, u8)) -> u8 {
    range.0 + prng.uniform_usize((range.1 - range.0 + 1) as usize) as u8
}

/// Samples a full degradation trace for an HR image of the given dims.
/// Draw order is fixed: stage-1 blur, resize mode, scale, quality; stage-2
/// blur presence, blur, resize mode, scale, sinc, sinc position, quality.
pub fn sample_trace(
    prng: &mut Prng,
    hr_h: usize,
    hr_w: usize,
    cfg: &DegradeConfig,
) -> DegradationTrace {
    const RESIZE_MODES: [ResizeMode; 3] =
        [ResizeMode::Area, ResizeMode::Bilinear, ResizeMode::Bicubic];

    let blur1 = sample_blur_spec(prng, 1);
    let mode1 = RESIZE_MODES[prng.uniform_usize(3)];
    let scale1 = prng.uniform_in(cfg.stage1_scale.0, cfg.stage1_scale.1);
    let (h1, w1) = floored_dims(hr_h, hr_w, scale1, cfg.min_intermediate_dim);
    let q1 = sample_quality(prng, cfg.jpeg_quality);

    let blur2 = if prng.bernoulli(cfg.second_blur_prob) {
        Some(sample_blur_spec(prng, 2))
    } else {
        None
    };
    let mode2 = RESIZE_MODES[prng.uniform_usize(3)];
    let scale2 = prng.uniform_in(cfg.stage2_scale.0, cfg.stage2_scale.1);
    let (h2, w2) = floored_dims(h1, w1, scale2, cfg.min_intermediate_dim);
    let sinc = kernel::sample_sinc_spec(prng);
    let sinc_position = if prng.bernoulli(0.5) {
        SincPosition::BeforeJpeg
    } else {
        SincPosition::AfterJpeg
    };
    let q2 = sample_quality(prng, cfg.jpeg_quality);

    DegradationTrace {
        stage1: StageOneTrace {
            blur: blur1,
            resize: ResizeStep {
                mode: mode1,
                scale: scale1,
                out_h: h1,
                out_w: w1,
            },
            jpeg_quality: q1,
        },
        stage2: StageTwoTrace {
            blur: blur2,
            resize: ResizeStep {
                mode: mode2,
                scale: scale2,
                out_h: h2,
                out_w: w2,
            },
            sinc,
            sinc_position,
            jpeg_quality: q2,
        },
        final_target: (hr_h / cfg.magnification, hr_w / cfg.magnification),
        chroma_subsampling: cfg.chroma_subsampling,
    }
}

/// Replays a recorded trace on an HR image. Deterministic; no randomness.
pub fn apply_trace(hr: &ImageTensor, trace: &DegradationTrace) -> Result<ImageTensor> {
    let s1 = &trace.stage1;
    let mut x = convolve(hr, &render_kernel(&s1.blur))?;
    x = resize_to(&x, s1.resize.out_h, s1.resize.out_w, s1.resize.mode)?;
    x = jpeg_artifacts(&x, s1.jpeg_quality, trace.chroma_subsampling)?;

    let s2 = &trace.stage2;
    if let Some(blur) = &s2.blur {
        x = convolve(&x, &render_kernel(blur))?;
    }
    x = resize_to(&x, s2.resize.out_h, s2.resize.out_w, s2.resize.mode)?;
    match s2.sinc_position {
        SincPosition::BeforeJpeg => {
            x = convolve(&x, &render_kernel(&s2.sinc))?;
            x = jpeg_artifacts(&x, s2.jpeg_quality, trace.chroma_subsampling)?;
        }
        SincPosition::AfterJpeg => {
            x = jpeg_artifacts(&x, s2.jpeg_quality, trace.chroma_subsampling)?;
            x = convolve(&x, &render_kernel(&s2.sinc))?;
        }
    }
    resize_to(&x, trace.final_target.0, trace.final_target.1, ResizeMode::Bicubic)
}

/// Samples a trace and applies it: HR → (LR, trace).
pub fn degrade(
    hr: &ImageTensor,
    prng: &mut Prng,
    cfg: &DegradeConfig,
) -> Result<(ImageTensor, DegradationTrace)> {
    check_hr(hr, cfg)?;
    let trace = sample_trace(prng, hr.height(), hr.width(), cfg);
    let lr = apply_trace(hr, &trace)?;
    Ok((lr, trace))
}

/// A trace with near-identity blurs, unit scales and high JPEG quality;
/// its output should be close to a plain bicubic downsample.
pub fn benign_trace(hr_h: usize, hr_w: usize, magnification: usize) -> DegradationTrace {
    let delta = BlurKernelSpec {
        family: BlurFamily::Gaussian,
        isotropic: true,
        sigma_x: 0.01,
        sigma_y: 0.01,
        rotation: 0.0,
        beta: 0.0,
        radius: 3,
        cutoff: 0.0,
    };
    let sinc = BlurKernelSpec {
        family: BlurFamily::Sinc,
        isotropic: true,
        sigma_x: 0.0,
        sigma_y: 0.0,
        rotation: 0.0,
        beta: 0.0,
        radius: 11,
        cutoff: std::f64::consts::PI,
    };
    DegradationTrace {
        stage1: StageOneTrace {
            blur: delta,
            resize: ResizeStep {
                mode: ResizeMode::Bicubic,
                scale: 1.0,
                out_h: hr_h,
                out_w: hr_w,
            },
            jpeg_quality: 95,
        },
        stage2: StageTwoTrace {
            blur: None,
            resize: ResizeStep {
                mode: ResizeMode::Bicubic,
                scale: 1.0,
                out_h: hr_h,
                out_w: hr_w,
            },
            sinc,
            sinc_position: SincPosition::BeforeJpeg,
            jpeg_quality: 95,
        },
        final_target: (hr_h / magnification, hr_w / magnification),
        chroma_subsampling: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use crate::tensor::ValueDomain;

    fn texture(h: usize, w: usize) -> ImageTensor {
        let mut t = ImageTensor::zeros(h, w, 3, ValueDomain::Unit);
        for y in 0..h {
            for x in 0..w {
                let fy = y as f32 / h as f32;
                let fx = x as f32 / w as f32;
                t.set(y, x, 0, 0.5 + 0.4 * (8.0 * fx).sin() * (5.0 * fy).cos());
                t.set(y, x, 1, 0.5 + 0.3 * (11.0 * (fx + fy)).sin());
                t.set(y, x, 2, fx * fy);
            }
        }
        t.into_unit()
    }

    #[test]
    fn replay_is_bit_exact() {
        let hr = texture(48, 48);
        let cfg = DegradeConfig::default();
        for seed in 0..5 {
            let mut p = Prng::from_seed(seed);
            let (lr, trace) = degrade(&hr, &mut p, &cfg).unwrap();
            let replay = apply_trace(&hr, &trace).unwrap();
            assert_eq!(lr, replay, "seed {seed}");
        }
    }

    #[test]
    fn trace_json_round_trip() {
        let hr = texture(48, 64);
        let mut p = Prng::from_seed(3);
        let (lr, trace) = degrade(&hr, &mut p, &DegradeConfig::default()).unwrap();
        let json = serde_json::to_string(&trace).unwrap();
        let back: DegradationTrace = serde_json::from_str(&json).unwrap();
        assert_eq!(trace, back);
        assert_eq!(apply_trace(&hr, &back).unwrap(), lr);
    }

    #[test]
    fn output_dims_are_hr_over_magnification() {
        let hr = texture(64, 48);
        let mut p = Prng::from_seed(4);
        let (lr, _) = degrade(&hr, &mut p, &DegradeConfig::default()).unwrap();
        assert_eq!(lr.shape(), (16, 12, 3));
    }

    #[test]
    fn preconditions_enforced() {
        let cfg = DegradeConfig::default();
        let mut p = Prng::from_seed(5);
        // not divisible by 4
        let bad = texture(50, 48);
        assert!(degrade(&bad, &mut p, &cfg).is_err());
        // smaller than 8 * magnification
        let small = texture(28, 28);
        assert!(degrade(&small, &mut p, &cfg).is_err());
    }

    #[test]
    fn benign_trace_close_to_plain_bicubic() {
        let hr = texture(48, 48);
        let lr = apply_trace(&hr, &benign_trace(48, 48, 4)).unwrap();
        let bicubic = resize_to(&hr, 12, 12, ResizeMode::Bicubic).unwrap();
        let db = psnr(&bicubic, &lr).unwrap();
        assert!(db > 40.0, "psnr {db}");
    }

    #[test]
    fn adversarial_trace_damages_more_than_benign() {
        let hr = texture(48, 48);
        let benign = apply_trace(&hr, &benign_trace(48, 48, 4)).unwrap();
        let mut adv = benign_trace(48, 48, 4);
        adv.stage1.blur = BlurKernelSpec {
            family: BlurFamily::Gaussian,
            isotropic: true,
            sigma_x: 3.0,
            sigma_y: 3.0,
            rotation: 0.0,
            beta: 0.0,
            radius: 11,
            cutoff: 0.0,
        };
        adv.stage1.resize = ResizeStep {
            mode: ResizeMode::Area,
            scale: 0.15,
            out_h: 12,
            out_w: 12,
        };
        adv.stage1.jpeg_quality = 30;
        adv.stage2.resize = ResizeStep {
            mode: ResizeMode::Bilinear,
            scale: 0.3,
            out_h: 12,
            out_w: 12,
        };
        adv.stage2.sinc.cutoff = std::f64::consts::PI / 5.0;
        adv.stage2.jpeg_quality = 30;
        let damaged = apply_trace(&hr, &adv).unwrap();
        let bicubic = resize_to(&hr, 12, 12, ResizeMode::Bicubic).unwrap();
        assert!(psnr(&bicubic, &benign).unwrap() > psnr(&bicubic, &damaged).unwrap());
    }

    #[test]
    fn second_blur_presence_rate() {
        let cfg = DegradeConfig::default();
        let mut p = Prng::from_seed(6);
        let n = 10_000;
        let mut present = 0usize;
        for _ in 0..n {
            let t = sample_trace(&mut p, 64, 64, &cfg);
            if t.stage2.blur.is_some() {
                present += 1;
            }
        }
        let frac = present as f64 / n as f64;
        assert!((frac - 0.8).abs() < 0.015, "fraction {frac}");
    }

    #[test]
    fn sampled_scales_and_qualities_in_range() {
        let cfg = DegradeConfig::default();
        let mut p = Prng::from_seed(7);
        for _ in 0..2_000 {
            let t = sample_trace(&mut p, 64, 64, &cfg);
            assert!(t.stage1.resize.scale >= 0.15 && t.stage1.resize.scale <= 1.5);
            assert!(t.stage2.resize.scale >= 0.3 && t.stage2.resize.scale <= 1.2);
            assert!((30..=95).contains(&t.stage1.jpeg_quality));
            assert!((30..=95).contains(&t.stage2.jpeg_quality));
            assert!(t.stage2.sinc.family == BlurFamily::Sinc);
            let (lo, hi) = kernel::cutoff_range(t.stage2.sinc.radius);
            assert!(t.stage2.sinc.cutoff >= lo && t.stage2.sinc.cutoff <= hi);
        }
    }
}
