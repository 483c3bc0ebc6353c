//! `ImageTensor`: the H×W×C float32 carrier used for HR images, LR
//! conditioning images and diffusion latents.
//!
//! Data is row-major and channel-interleaved: index (y, x, c) lives at
//! `(y * width + x) * channels + c`. Unit-domain tensors hold displayable
//! images and are clamped to [0, 1] at the points where they are produced;
//! latent tensors are unbounded and never clamped.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueDomain {
    /// Values in [0, 1]; enforced by clamping wherever a unit image is made.
    Unit,
    /// Unbounded values (noisy latents, predicted noise).
    Latent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    domain: ValueDomain,
    data: Vec<f32>,
}

impl ImageTensor {
    /// Builds a tensor from raw data. Fails if the buffer length does not
    /// equal `height * width * channels` or any dim is zero.
    pub fn from_data(
        height: usize,
        width: usize,
        channels: usize,
        domain: ValueDomain,
        data: Vec<f32>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid(format!(
                "tensor dims must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            domain,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize, domain: ValueDomain) -> Self {
        Self {
            height,
            width,
            channels,
            domain,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn constant(
        height: usize,
        width: usize,
        channels: usize,
        domain: ValueDomain,
        value: f32,
    ) -> Self {
        Self {
            height,
            width,
            channels,
            domain,
            data: vec![value; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn domain(&self) -> ValueDomain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Clamps every element to [0, 1] and marks the tensor unit-domain.
    pub fn into_unit(mut self) -> ImageTensor {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self.domain = ValueDomain::Unit;
        self
    }

    /// Reinterprets the tensor as a latent without touching the data.
    pub fn into_latent(mut self) -> ImageTensor {
        self.domain = ValueDomain::Latent;
        self
    }

    /// Elementwise map returning a latent-domain tensor of the same shape.
    pub fn map_latent(&self, f: impl Fn(f32) -> f32) -> ImageTensor {
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            domain: ValueDomain::Latent,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Extracts a crop. The crop must lie fully inside the image.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<ImageTensor> {
        if y0 + h > self.height || x0 + w > self.width || h == 0 || w == 0 {
            return Err(Error::invalid(format!(
                "crop {h}x{w}@({y0},{x0}) exceeds image {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * self.channels);
        for y in 0..h {
            let row = ((y0 + y) * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[row..row + w * self.channels]);
        }
        Ok(ImageTensor {
            height: h,
            width: w,
            channels: self.channels,
            domain: self.domain,
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
