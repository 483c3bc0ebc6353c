//! NCHW batch tensor for the gradient engine.

use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, ValueDomain};

#[derive(Debug, Clone, PartialEq)]
pub struct Feat<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Feat<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![T::ZERO; n * c * h * w],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn same_shape(&self, other: &Feat<T>) -> bool {
        self.shape() == other.shape()
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.idx(n, c, y, x)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite_v())
    }

    /// Stacks same-shaped HWC images into an NCHW batch.
    pub fn from_images(images: &[ImageTensor]) -> Result<Feat<T>> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("empty image batch"))?;
        if images.iter().any(|i| !i.same_shape(first)) {
            return Err(Error::invalid("batch images must share dims"));
        }
        let (h, w, c) = first.shape();
        let mut f = Feat::zeros(images.len(), c, h, w);
        for (n, img) in images.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        let v = T::from_f64(img.at(y, x, ch) as f64);
                        let i = f.idx(n, ch, y, x);
                        f.data[i] = v;
                    }
                }
            }
        }
        Ok(f)
    }

    /// Extracts batch item `n` as an HWC image.
    pub fn to_image(&self, n: usize, domain: ValueDomain) -> Result<ImageTensor> {
        if n >= self.n {
            return Err(Error::invalid(format!("batch index {n} out of {}", self.n)));
        }
        let mut data = vec![0.0f32; self.c * self.h * self.w];
        for c in 0..self.c {
            for y in 0..self.h {
                for x in 0..self.w {
                    data[(y * self.w + x) * self.c + c] = self.at(n, c, y, x).to_f64() as f32;
                }
            }
        }
        ImageTensor::from_data(self.h, self.w, self.c, domain, data)
    }

    /// Builds an [N, F, 1, 1] feature-vector batch from rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Feat<T>> {
        let first = rows.first().ok_or_else(|| Error::invalid("empty rows"))?;
        let f = first.len();
        if rows.iter().any(|r| r.len() != f) {
            return Err(Error::invalid("rows must share length"));
        }
        Ok(Feat {
            n: rows.len(),
            c: f,
            h: 1,
            w: 1,
            data: rows
                .iter()
                .flat_map(|r| r.iter().map(|&v| T::from_f64(v)))
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_round_trip() {
        let img = ImageTensor::from_data(
            2,
            3,
            3,
            ValueDomain::Unit,
            (0..18).map(|v| v as f32 / 17.0).collect(),
        )
        .unwrap();
        let f = Feat::<f32>::from_images(&[img.clone(), img.clone()]).unwrap();
        assert_eq!(f.shape(), (2, 3, 2, 3));
        let back = f.to_image(1, ValueDomain::Unit).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn index_layout_is_nchw() {
        let mut f = Feat::<f32>::zeros(2, 2, 2, 2);
        let i = f.idx(1, 1, 1, 1);
        assert_eq!(i, 15);
        f.data[i] = 1.0;
        assert_eq!(f.at(1, 1, 1, 1), 1.0);
    }
}
