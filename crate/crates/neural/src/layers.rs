//! Parameterised layers on top of the kernels in [`crate::ops`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::adam::{adam_step, AdamConfig, AdamState};
use crate::error::Result;
use crate::ops::{self, ConvGeom, ConvParams};
use crate::tensor::Tensor4;

pub const INIT_STD: f64 = 0.02;

/// A trainable tensor with its gradient accumulator and optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
    pub adam: AdamState,
}

impl Param {
    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
            grad: vec![0.0; len],
            adam: AdamState::new(len),
        }
    }

    /// Normal(0, std) truncated at two standard deviations.
    pub fn truncated_normal(len: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let data = (0..len)
            .map(|_| loop {
                let v: f64 = normal.sample(rng);
                if v.abs() <= 2.0 * std {
                    break v;
                }
            })
            .collect();
        Self {
            data,
            ..Self::zeros(len)
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn step(&mut self, cfg: &AdamConfig) -> Result<()> {
        adam_step(&mut self.data, &self.grad, &mut self.adam, cfg)
    }
}

/// Which kernel a [`Conv`] layer runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Forward,
    Transposed,
}

/// 2-D convolution or transposed convolution with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub kind: ConvKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub geom: ConvGeom,
    pub weight: Param,
    pub bias: Param,
}

impl Conv {
    pub fn new(
        kind: ConvKind,
        in_channels: usize,
        out_channels: usize,
        geom: ConvGeom,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let len = in_channels * out_channels * geom.kernel * geom.kernel;
        Self {
            kind,
            in_channels,
            out_channels,
            geom,
            weight: Param::truncated_normal(len, INIT_STD, rng),
            bias: Param::zeros(out_channels),
        }
    }

    fn params(&self) -> ConvParams<'_> {
        ConvParams {
            weight: &self.weight.data,
            bias: &self.bias.data,
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            geom: self.geom,
        }
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        match self.kind {
            ConvKind::Forward => ops::conv2d_forward(x, &self.params()),
            ConvKind::Transposed => ops::tconv2d_forward(x, &self.params()),
        }
    }

    /// Accumulates weight and bias gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor4, dy: &Tensor4) -> Result<Tensor4> {
        let p = ConvParams {
            weight: &self.weight.data,
            bias: &self.bias.data,
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            geom: self.geom,
        };
        match self.kind {
            ConvKind::Forward => ops::conv2d_backward(x, &p, dy, &mut self.weight.grad, &mut self.bias.grad),
            ConvKind::Transposed => {
                ops::tconv2d_backward(x, &p, dy, &mut self.weight.grad, &mut self.bias.grad)
            }
        }
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params_ref(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

/// Random tensor with entries uniform in `[-1, 1)`; test and smoke helper.
pub fn uniform_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4 {
    let n = shape.iter().product();
    Tensor4::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("length matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn init_is_truncated_and_seeded() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let p = Param::truncated_normal(5000, INIT_STD, &mut a);
        let q = Param::truncated_normal(5000, INIT_STD, &mut b);
        assert_eq!(p, q);
        assert!(p.data.iter().all(|v| v.abs() <= 0.04));
        let mean = p.data.iter().sum::<f64>() / 5000.0;
        let var = p.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5000.0;
        assert!(mean.abs() < 2e-3);
        // truncation at 2 sigma shrinks the std to about 0.88 sigma
        assert!((var.sqrt() - 0.88 * INIT_STD).abs() < 2e-3, "{}", var.sqrt());
    }
}
