//! Deterministic, splittable randomness.
//!
//! Every stochastic operation in the toolkit draws from a [`Prng`], so a
//! single top-level seed fully determines all outputs. The generator is
//! ChaCha12 keyed by a 64-bit seed, with the 64-bit ChaCha stream counter
//! used as the stream id; the raw word stream is bit-identical across
//! platforms. Child streams are derived by mixing a child index into the
//! parent's stream id (splitmix64 finalizer), so parallel work can fan out
//! without coordination.
//!
//! Floating-point derivations are fixed here rather than delegated:
//! uniforms take the top 53 bits of a `u64`, and normals use the Box-Muller
//! transform, so traces reproduce across builds.

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, ValueDomain};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone)]
pub struct Prng {
    seed: u64,
    stream_id: u64,
    rng: ChaCha12Rng,
    spare_normal: Option<f64>,
}

/// splitmix64 finalizer; mixes a child index into a stream id.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Prng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
            spare_normal: None,
        }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, 0)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derives an independent child stream. Children of distinct indices
    /// (and of distinct parents) use distinct ChaCha streams.
    pub fn split(&self, child: u64) -> Prng {
        Prng::new(self.seed, mix64(self.stream_id ^ mix64(child.wrapping_add(1))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.uniform() * (hi - lo)
    }

    /// Uniform integer in [0, n). Uses the 128-bit multiply reduction.
    pub fn uniform_usize(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Picks an index according to `weights` (need not be normalized).
    pub fn choose_weighted(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        weights.len() - 1
    }

    /// Standard normal via Box-Muller; pairs are cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let mut u1 = self.uniform();
        if u1 <= 0.0 {
            u1 = f64::MIN_POSITIVE;
        }
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill_normal(&mut self, out: &mut [f32]) {
        for v in out {
            *v = self.normal() as f32;
        }
    }
}

/// I.i.d. N(0, 1) samples shaped as a latent tensor.
pub fn sample_standard_normal(
    prng: &mut Prng,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<ImageTensor> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::invalid(format!(
            "normal sample dims must be positive, got {height}x{width}x{channels}"
        )));
    }
    let mut data = vec![0.0f32; height * width * channels];
    prng.fill_normal(&mut data);
    ImageTensor::from_data(height, width, channels, ValueDomain::Latent, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn determinism_same_seed_same_values() {
        let mut a = Prng::new(7, 3);
        let mut b = Prng::new(7, 3);
        let ta = sample_standard_normal(&mut a, 2, 2, 1).unwrap();
        let tb = sample_standard_normal(&mut b, 2, 2, 1).unwrap();
        assert_eq!(ta.data(), tb.data());
    }

    #[test]
    fn different_streams_differ() {
        let root = Prng::from_seed(1);
        let mut a = root.split(0);
        let mut b = root.split(1);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn zero_dims_rejected() {
        let mut p = Prng::from_seed(0);
        assert!(sample_standard_normal(&mut p, 0, 4, 1).is_err());
    }

    #[test]
    fn normal_moments_match_standard_gaussian() {
        // Monte-Carlo oracle: mean in (-0.02, 0.02), variance in (0.98, 1.02)
        // over 1e5 draws.
        let mut p = Prng::from_seed(11);
        let n = 100_000;
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        for _ in 0..n {
            let z = p.normal();
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn split_streams_uncorrelated() {
        // Pearson correlation of 1e4 paired draws from two child streams.
        let root = Prng::from_seed(40);
        let mut a = root.split(1);
        let mut b = root.split(2);
        let n = 10_000;
        let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = a.normal();
            let y = b.normal();
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
            sab += x * y;
        }
        let nf = n as f64;
        let cov = sab / nf - (sa / nf) * (sb / nf);
        let va = saa / nf - (sa / nf) * (sa / nf);
        let vb = sbb / nf - (sb / nf) * (sb / nf);
        let rho = cov / (va * vb).sqrt();
        assert!(rho.abs() < 0.03, "rho {rho}");
    }

    #[test]
    fn weighted_choice_hits_each_bin() {
        let mut p = Prng::from_seed(5);
        let mut counts = [0usize; 3];
        for _ in 0..3000 {
            counts[p.choose_weighted(&[0.5, 0.25, 0.25])] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));
        assert!(counts[0] > counts[1]);
    }
}
