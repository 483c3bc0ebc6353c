//! Blind super-resolution toolkit.
//!
//! End-to-end pieces for self-supervised 4× super-resolution: a two-stage
//! parametric degradation pipeline (blur, resize, JPEG), a continuous-time
//! denoising diffusion core with noise-conditioning augmentation, a small
//! convolutional ε-prediction UNet trained with a built-in reverse-mode
//! gradient engine, and PSNR/SSIM/Fréchet evaluation.

pub mod config;
pub mod data;
pub mod degrade;
pub mod diffusion;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod prng;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
pub use prng::Prng;
pub use tensor::{ImageTensor, ValueDomain};
