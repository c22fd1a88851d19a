use depthvision_core::ImageSigned;

use crate::error::{NeuralError, Result};

/// Dense `(batch, channels, height, width)` array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(NeuralError::Shape {
                op: "tensor",
                left: shape.to_vec(),
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn item(&self, n: usize) -> &[f64] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_shape(&self, other: &Tensor4, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(NeuralError::Shape {
                op,
                left: self.shape.to_vec(),
                right: other.shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Stacks equally sized signed images into a batch.
    pub fn stack(images: &[&ImageSigned]) -> Result<Self> {
        let first = images.first().ok_or_else(|| NeuralError::Config("empty batch".into()))?;
        let shape = [images.len(), first.channels(), first.height(), first.width()];
        let mut data = Vec::with_capacity(shape.iter().product());
        for img in images {
            let s = [img.channels(), img.height(), img.width()];
            if s != shape[1..] {
                return Err(NeuralError::Shape {
                    op: "stack",
                    left: shape[1..].to_vec(),
                    right: s.to_vec(),
                });
            }
            data.extend_from_slice(img.data());
        }
        Ok(Self { shape, data })
    }

    pub fn from_image(img: &ImageSigned) -> Self {
        Self {
            shape: [1, img.channels(), img.height(), img.width()],
            data: img.data().to_vec(),
        }
    }

    /// Batch item `n` as a signed image (values clamped to `[-1, 1]`).
    pub fn to_image(&self, n: usize) -> Result<ImageSigned> {
        let data = self.item(n).iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        Ok(ImageSigned::new(self.width(), self.height(), self.channels(), data)?)
    }
}
