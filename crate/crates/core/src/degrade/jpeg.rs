//! JPEG quantization artifacts without entropy coding.
//!
//! RGB → YCbCr (BT.601 full-range), optional 4:2:0 chroma subsampling,
//! 8×8 orthonormal DCT-II, quantize/dequantize with the Annex-K tables
//! scaled by the IJG quality rule, inverse transform, and back to RGB.
//! Entropy coding is lossless so it is omitted; the artifacts are the
//! quantization and subsampling losses.

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, ValueDomain};

#[rustfmt::skip]
const LUMA_QUANT: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[rustfmt::skip]
const CHROMA_QUANT: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// IJG scaling: 5000/q below 50, else 200 − 2q; entries clamp to [1, 255].
fn scaled_table(base: &[u16; 64], quality: u8) -> [f64; 64] {
    let q = quality as i64;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0f64; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        let v = (b as i64 * scale + 50) / 100;
        *o = v.clamp(1, 255) as f64;
    }
    out
}

struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }
}

fn dct_cos_table() -> [[f64; 8]; 8] {
    let mut t = [[0.0; 8]; 8];
    for (u, row) in t.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            *v = ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    t
}

/// Quantization round trip of one plane: pad to 8×8 blocks by edge
/// replication, per block DCT → round(F/q)·q → IDCT.
fn quantize_plane(plane: &Plane, table: &[f64; 64]) -> Plane {
    let cos = dct_cos_table();
    let c = |u: usize| if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
    let bh = plane.h.div_ceil(8);
    let bw = plane.w.div_ceil(8);
    let mut out = vec![0.0f64; plane.h * plane.w];
    let mut block = [0.0f64; 64];
    let mut freq = [0.0f64; 64];
    for by in 0..bh {
        for bx in 0..bw {
            for y in 0..8 {
                let sy = (by * 8 + y).min(plane.h - 1);
                for x in 0..8 {
                    let sx = (bx * 8 + x).min(plane.w - 1);
                    block[y * 8 + x] = plane.at(sy, sx) - 128.0;
                }
            }
            // forward DCT-II, quantize, dequantize
            for u in 0..8 {
                for v in 0..8 {
                    let mut acc = 0.0;
                    for y in 0..8 {
                        for x in 0..8 {
                            acc += block[y * 8 + x] * cos[u][y] * cos[v][x];
                        }
                    }
                    let f = 0.25 * c(u) * c(v) * acc;
                    let q = table[u * 8 + v];
                    freq[u * 8 + v] = (f / q).round() * q;
                }
            }
            // inverse DCT
            for y in 0..8 {
                let ty = by * 8 + y;
                if ty >= plane.h {
                    continue;
                }
                for x in 0..8 {
                    let tx = bx * 8 + x;
                    if tx >= plane.w {
                        continue;
                    }
                    let mut acc = 0.0;
                    for u in 0..8 {
                        for v in 0..8 {
                            acc += c(u) * c(v) * freq[u * 8 + v] * cos[u][y] * cos[v][x];
                        }
                    }
                    out[ty * plane.w + tx] = 0.25 * acc + 128.0;
                }
            }
        }
    }
    Plane {
        h: plane.h,
        w: plane.w,
        data: out,
    }
}

fn subsample(plane: &Plane) -> Plane {
    let h = plane.h.div_ceil(2);
    let w = plane.w.div_ceil(2);
    let mut data = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let y0 = 2 * y;
            let x0 = 2 * x;
            let y1 = (y0 + 1).min(plane.h - 1);
            let x1 = (x0 + 1).min(plane.w - 1);
            data[y * w + x] =
                0.25 * (plane.at(y0, x0) + plane.at(y0, x1) + plane.at(y1, x0) + plane.at(y1, x1));
        }
    }
    Plane { h, w, data }
}

fn upsample_to(plane: &Plane, h: usize, w: usize) -> Plane {
    let mut data = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            data[y * w + x] = plane.at((y / 2).min(plane.h - 1), (x / 2).min(plane.w - 1));
        }
    }
    Plane { h, w, data }
}

/// Applies JPEG quantization artifacts at the given quality factor.
/// `chroma_subsampling` selects 4:2:0 (on) vs 4:4:4 (off); it is ignored
/// for single-channel images.
pub fn jpeg_artifacts(img: &ImageTensor, quality: u8, chroma_subsampling: bool) -> Result<ImageTensor> {
    if !(1..=100).contains(&quality) {
        return Err(Error::invalid(format!(
            "jpeg quality must be in [1,100], got {quality}"
        )));
    }
    let (h, w, ch) = img.shape();
    if ch != 1 && ch != 3 {
        return Err(Error::invalid(format!("jpeg needs 1 or 3 channels, got {ch}")));
    }
    let luma_t = scaled_table(&LUMA_QUANT, quality);
    let chroma_t = scaled_table(&CHROMA_QUANT, quality);

    if ch == 1 {
        let plane = Plane {
            h,
            w,
            data: img.data().iter().map(|&v| v as f64 * 255.0).collect(),
        };
        let out = quantize_plane(&plane, &luma_t);
        let data = out.data.iter().map(|&v| (v / 255.0) as f32).collect();
        return Ok(ImageTensor::from_data(h, w, 1, ValueDomain::Latent, data)?.into_unit());
    }

    // BT.601 full-range RGB → YCbCr on the 0..255 scale.
    let n = h * w;
    let mut yp = vec![0.0f64; n];
    let mut cb = vec![0.0f64; n];
    let mut cr = vec![0.0f64; n];
    for i in 0..n {
        let r = img.data()[3 * i] as f64 * 255.0;
        let g = img.data()[3 * i + 1] as f64 * 255.0;
        let b = img.data()[3 * i + 2] as f64 * 255.0;
        yp[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        cb[i] = 128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b;
        cr[i] = 128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b;
    }
    let yp = Plane { h, w, data: yp };
    let cb = Plane { h, w, data: cb };
    let cr = Plane { h, w, data: cr };

    let yq = quantize_plane(&yp, &luma_t);
    let (cbq, crq) = if chroma_subsampling {
        let cbs = quantize_plane(&subsample(&cb), &chroma_t);
        let crs = quantize_plane(&subsample(&cr), &chroma_t);
        (upsample_to(&cbs, h, w), upsample_to(&crs, h, w))
    } else {
        (quantize_plane(&cb, &chroma_t), quantize_plane(&cr, &chroma_t))
    };

    let mut data = vec![0.0f32; n * 3];
    for i in 0..n {
        let y = yq.data[i];
        let u = cbq.data[i] - 128.0;
        let v = crq.data[i] - 128.0;
        data[3 * i] = ((y + 1.402 * v) / 255.0) as f32;
        data[3 * i + 1] = ((y - 0.344_136 * u - 0.714_136 * v) / 255.0) as f32;
        data[3 * i + 2] = ((y + 1.772 * u) / 255.0) as f32;
    }
    Ok(ImageTensor::from_data(h, w, 3, ValueDomain::Latent, data)?.into_unit())
}
