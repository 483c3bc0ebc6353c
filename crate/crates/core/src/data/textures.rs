//! Procedural texture corpus for self-contained experiments.
//!
//! Mixes oriented gratings, smooth color gradients, hard-edged shapes and
//! lightly blurred noise so the corpus carries energy at all the
//! frequencies the degradation pipeline and the denoiser care about.

use crate::degrade::{convolve, render_kernel, BlurFamily, BlurKernelSpec};
use crate::error::{Error, Result};
use crate::io::save_image;
use crate::prng::Prng;
use crate::tensor::{ImageTensor, ValueDomain};
use std::fs;
use std::path::Path;

/// One deterministic texture image.
pub fn synthesize_texture(prng: &mut Prng, h: usize, w: usize) -> ImageTensor {
    let mut img = ImageTensor::zeros(h, w, 3, ValueDomain::Latent);

    // smooth color gradient base
    let base: Vec<f64> = (0..3).map(|_| prng.uniform_in(0.25, 0.75)).collect();
    let (gy, gx): (Vec<f64>, Vec<f64>) = (
        (0..3).map(|_| prng.uniform_in(-0.3, 0.3)).collect(),
        (0..3).map(|_| prng.uniform_in(-0.3, 0.3)).collect(),
    );
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = base[c] + gy[c] * y as f64 / h as f64 + gx[c] * x as f64 / w as f64;
                img.set(y, x, c, v as f32);
            }
        }
    }

    // oriented gratings
    let n_gratings = 1 + prng.uniform_usize(3);
    for _ in 0..n_gratings {
        let theta = prng.uniform_in(0.0, std::f64::consts::PI);
        let freq = prng.uniform_in(2.0, 14.0);
        let phase = prng.uniform_in(0.0, std::f64::consts::TAU);
        let amp: Vec<f64> = (0..3).map(|_| prng.uniform_in(0.02, 0.18)).collect();
        let (ct, st) = (theta.cos(), theta.sin());
        for y in 0..h {
            for x in 0..w {
                let u = ct * x as f64 / w as f64 + st * y as f64 / h as f64;
                let s = (freq * std::f64::consts::TAU * u + phase).sin();
                for c in 0..3 {
                    let v = img.at(y, x, c) as f64 + amp[c] * s;
                    img.set(y, x, c, v as f32);
                }
            }
        }
    }

    // hard-edged rectangles and disks
    let n_shapes = 2 + prng.uniform_usize(4);
    for _ in 0..n_shapes {
        let color: Vec<f64> = (0..3).map(|_| prng.uniform_in(0.0, 1.0)).collect();
        let alpha = prng.uniform_in(0.35, 0.9);
        let cy = prng.uniform_usize(h);
        let cx = prng.uniform_usize(w);
        let ry = 2 + prng.uniform_usize(h / 4);
        let rx = 2 + prng.uniform_usize(w / 4);
        let disk = prng.bernoulli(0.5);
        for y in cy.saturating_sub(ry)..(cy + ry).min(h) {
            for x in cx.saturating_sub(rx)..(cx + rx).min(w) {
                let dy = (y as f64 - cy as f64) / ry as f64;
                let dx = (x as f64 - cx as f64) / rx as f64;
                if disk && dy * dy + dx * dx > 1.0 {
                    continue;
                }
                for c in 0..3 {
                    let v = (1.0 - alpha) * img.at(y, x, c) as f64 + alpha * color[c];
                    img.set(y, x, c, v as f32);
                }
            }
        }
    }

    // lightly blurred noise for fine texture
    let noise_amp = prng.uniform_in(0.02, 0.1);
    let mut noise = ImageTensor::zeros(h, w, 3, ValueDomain::Latent);
    for v in noise.data_mut() {
        *v = prng.normal() as f32;
    }
    let blur = BlurKernelSpec {
        family: BlurFamily::Gaussian,
        isotropic: true,
        sigma_x: 0.7,
        sigma_y: 0.7,
        rotation: 0.0,
        beta: 0.0,
        radius: 3,
        cutoff: 0.0,
    };
    let noise = convolve(&noise, &render_kernel(&blur)).expect("small kernel fits");
    for (v, n) in img.data_mut().iter_mut().zip(noise.data()) {
        *v += noise_amp as f32 * n;
    }

    img.into_unit()
}

/// A gradient-plus-low-frequency image with no hard edges.
pub fn synthesize_smooth(prng: &mut Prng, h: usize, w: usize) -> ImageTensor {
    let mut img = ImageTensor::zeros(h, w, 3, ValueDomain::Latent);
    let base: Vec<f64> = (0..3).map(|_| prng.uniform_in(0.3, 0.7)).collect();
    let freq = prng.uniform_in(0.5, 2.0);
    for y in 0..h {
        for x in 0..w {
            let fy = y as f64 / h as f64;
            let fx = x as f64 / w as f64;
            for c in 0..3 {
                let v = base[c]
                    + 0.2 * (freq * std::f64::consts::TAU * (fx + 0.5 * fy)).sin()
                    + 0.1 * (fy - fx);
                img.set(y, x, c, v as f32);
            }
        }
    }
    img.into_unit()
}

/// Writes `n` deterministic texture PNGs (tex_00000.png, ...) into `dir`.
pub fn synthesize_corpus(dir: &Path, n: usize, size: usize, seed: u64) -> Result<()> {
    if n == 0 || size == 0 {
        return Err(Error::invalid("corpus needs n > 0 and size > 0"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let root = Prng::new(seed, 0x7e87);
    for i in 0..n {
        let mut p = root.split(i as u64);
        let img = synthesize_texture(&mut p, size, size);
        save_image(&dir.join(format!("tex_{i:05}.png")), &img)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn corpus_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        synthesize_corpus(a.path(), 3, 48, 42).unwrap();
        synthesize_corpus(b.path(), 3, 48, 42).unwrap();
        for i in 0..3 {
            let fa = fs::read(a.path().join(format!("tex_{i:05}.png"))).unwrap();
            let fb = fs::read(b.path().join(format!("tex_{i:05}.png"))).unwrap();
            assert_eq!(fa, fb);
        }
    }

    #[test]
    fn textures_have_spread() {
        let mut p = Prng::from_seed(1);
        let img = synthesize_texture(&mut p, 48, 48);
        let mean: f32 = img.data().iter().sum::<f32>() / img.len() as f32;
        let var: f32 =
            img.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / img.len() as f32;
        assert!(var > 1e-3, "variance {var}");
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
