//! Dense 2-D convolution with symmetric reflect padding.

use super::kernel::Kernel;
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, ValueDomain};

/// Mirror index into [0, n) with edge repetition (…cba|abc…|cba…); valid
/// for offsets up to n, matching the kernel-size limit below.
#[inline]
fn reflect(pos: isize, n: usize) -> usize {
    let n = n as isize;
    let p = if pos < 0 {
        -pos - 1
    } else if pos >= n {
        2 * n - 1 - pos
    } else {
        pos
    };
    debug_assert!(p >= 0 && p < n);
    p as usize
}

/// Convolves each channel with `kernel`. Unit-domain inputs yield clamped
/// unit-domain outputs; latents stay unclamped.
pub fn convolve(img: &ImageTensor, kernel: &Kernel) -> Result<ImageTensor> {
    let (h, w, ch) = img.shape();
    if kernel.size > 2 * h.min(w) + 1 {
        return Err(Error::invalid(format!(
            "kernel size {} exceeds 2*min(H,W)+1 = {}",
            kernel.size,
            2 * h.min(w) + 1
        )));
    }
    let r = (kernel.size / 2) as isize;
    let mut out = vec![0.0f32; h * w * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0f64;
                for ky in -r..=r {
                    let sy = reflect(y as isize + ky, h);
                    for kx in -r..=r {
                        let sx = reflect(x as isize + kx, w);
                        let kv = kernel.at((ky + r) as usize, (kx + r) as usize);
                        acc += kv * img.at(sy, sx, c) as f64;
                    }
                }
                out[(y * w + x) * ch + c] = acc as f32;
            }
        }
    }
    let t = ImageTensor::from_data(h, w, ch, ValueDomain::Latent, out)?;
    Ok(match img.domain() {
        ValueDomain::Unit => t.into_unit(),
        ValueDomain::Latent => t,
    })
}
