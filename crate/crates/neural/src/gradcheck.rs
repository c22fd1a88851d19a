//! Central finite-difference checks of the analytic backward kernels.
//!
//! Each check draws a random configuration, contracts the primitive's output
//! with a random upstream tensor `w` (loss `sum(w * y)`), and compares the
//! analytic gradients with `(L(x + h) - L(x - h)) / 2h` for every input and
//! parameter entry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::uniform_tensor;
use crate::ops::{self, ConvGeom, ConvParams};
use crate::tensor::Tensor4;

pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    Conv2d,
    Tconv2d,
    Relu,
    LeakyRelu,
    Tanh,
    Concat,
    Clamp,
    Bce,
    L1,
}

impl Primitive {
    pub const ALL: [Primitive; 9] = [
        Primitive::Conv2d,
        Primitive::Tconv2d,
        Primitive::Relu,
        Primitive::LeakyRelu,
        Primitive::Tanh,
        Primitive::Concat,
        Primitive::Clamp,
        Primitive::Bce,
        Primitive::L1,
    ];
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub primitive: Primitive,
    pub shape: [usize; 4],
    /// Largest norm-wise relative error over all checked gradients.
    pub rel_error: f64,
}

/// `||a - b|| / max(||a|| + ||b||, tiny)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale.max(1e-300)
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_gradient(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_shape(rng: &mut ChaCha8Rng) -> [usize; 4] {
    [
        rng.random_range(1..=2),
        rng.random_range(1..=4),
        rng.random_range(1..=8),
        rng.random_range(1..=8),
    ]
}

/// Moves entries away from the kinks of piecewise-linear functions so the
/// finite difference never straddles one.
fn away_from(x: &mut Tensor4, kinks: &[f64]) {
    for v in x.data_mut() {
        for &k in kinks {
            if (*v - k).abs() < 1e-3 {
                *v = k + if *v >= k { 1e-3 } else { -1e-3 };
            }
        }
    }
}

fn with(x: &Tensor4, data: &[f64]) -> Tensor4 {
    Tensor4::from_vec(x.shape(), data.to_vec()).expect("same length")
}

/// Runs one randomized check of `primitive`.
pub fn check(primitive: Primitive, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match primitive {
        Primitive::Conv2d | Primitive::Tconv2d => check_conv(primitive, &mut rng),
        Primitive::Concat => {
            let a = uniform_tensor(random_shape(&mut rng), &mut rng);
            let mut sb = a.shape();
            sb[1] = rng.random_range(1..=4);
            let b = uniform_tensor(sb, &mut rng);
            let y = ops::concat_forward(&a, &b)?;
            let w = uniform_tensor(y.shape(), &mut rng);
            let (da, db) = ops::concat_backward(&w, a.channels())?;
            let na = numeric_gradient(a.data(), FD_STEP, |d| {
                dot(ops::concat_forward(&with(&a, d), &b).expect("shapes").data(), w.data())
            });
            let nb = numeric_gradient(b.data(), FD_STEP, |d| {
                dot(ops::concat_forward(&a, &with(&b, d)).expect("shapes").data(), w.data())
            });
            Ok(GradCheck {
                primitive,
                shape: y.shape(),
                rel_error: relative_error(da.data(), &na).max(relative_error(db.data(), &nb)),
            })
        }
        Primitive::Bce => {
            let x = uniform_tensor(random_shape(&mut rng), &mut rng).map(|v| 3.0 * v);
            let label = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            let (_, g) = ops::bce_with_logits(&x, label);
            let n = numeric_gradient(x.data(), FD_STEP, |d| ops::bce_with_logits(&with(&x, d), label).0);
            Ok(GradCheck {
                primitive,
                shape: x.shape(),
                rel_error: relative_error(g.data(), &n),
            })
        }
        Primitive::L1 => {
            let shape = random_shape(&mut rng);
            let t = uniform_tensor(shape, &mut rng);
            let mut x = uniform_tensor(shape, &mut rng);
            for (v, tv) in x.data_mut().iter_mut().zip(t.data()) {
                if (*v - tv).abs() < 1e-3 {
                    *v = tv + 1e-3;
                }
            }
            let (_, g) = ops::l1_loss(&x, &t)?;
            let n = numeric_gradient(x.data(), FD_STEP, |d| ops::l1_loss(&with(&x, d), &t).expect("shapes").0);
            Ok(GradCheck {
                primitive,
                shape,
                rel_error: relative_error(g.data(), &n),
            })
        }
        Primitive::Relu | Primitive::LeakyRelu | Primitive::Tanh | Primitive::Clamp => {
            let mut x = uniform_tensor(random_shape(&mut rng), &mut rng).map(|v| 1.5 * v);
            away_from(&mut x, &[0.0, -1.0, 1.0]);
            let w = uniform_tensor(x.shape(), &mut rng);
            let fwd = |t: &Tensor4| match primitive {
                Primitive::Relu => ops::relu_forward(t),
                Primitive::LeakyRelu => ops::leaky_relu_forward(t),
                Primitive::Tanh => ops::tanh_forward(t),
                _ => ops::clamp_unit_forward(t),
            };
            let g = match primitive {
                Primitive::Relu => ops::relu_backward(&x, &w)?,
                Primitive::LeakyRelu => ops::leaky_relu_backward(&x, &w)?,
                Primitive::Tanh => ops::tanh_backward(&fwd(&x), &w)?,
                _ => ops::clamp_unit_backward(&x, &w)?,
            };
            let n = numeric_gradient(x.data(), FD_STEP, |d| dot(fwd(&with(&x, d)).data(), w.data()));
            Ok(GradCheck {
                primitive,
                shape: x.shape(),
                rel_error: relative_error(g.data(), &n),
            })
        }
    }
}

fn check_conv(primitive: Primitive, rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let transposed = primitive == Primitive::Tconv2d;
    let (x, geom) = loop {
        let shape = random_shape(rng);
        let k = rng.random_range(1..=4);
        let s = rng.random_range(1..=2);
        let p = rng.random_range(0..k);
        let g = ConvGeom::new(k, s, p);
        let ok = if transposed {
            matches!((g.tconv_out(shape[2]), g.tconv_out(shape[3])), (Some(a), Some(b)) if a > 0 && b > 0)
        } else {
            g.conv_out(shape[2]).is_some() && g.conv_out(shape[3]).is_some()
        };
        if ok {
            break (uniform_tensor(shape, rng), g);
        }
    };
    let cin = x.channels();
    let cout = rng.random_range(1..=4);
    let k = geom.kernel;
    let weight: Vec<f64> = (0..cin * cout * k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let bias: Vec<f64> = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
    let fwd = |x: &Tensor4, wt: &[f64], b: &[f64]| {
        let p = ConvParams {
            weight: wt,
            bias: b,
            in_channels: cin,
            out_channels: cout,
            geom,
        };
        if transposed {
            ops::tconv2d_forward(x, &p)
        } else {
            ops::conv2d_forward(x, &p)
        }
        .expect("valid configuration")
    };
    let y = fwd(&x, &weight, &bias);
    let w = uniform_tensor(y.shape(), rng);
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; bias.len()];
    let p = ConvParams {
        weight: &weight,
        bias: &bias,
        in_channels: cin,
        out_channels: cout,
        geom,
    };
    let dx = if transposed {
        ops::tconv2d_backward(&x, &p, &w, &mut dw, &mut db)?
    } else {
        ops::conv2d_backward(&x, &p, &w, &mut dw, &mut db)?
    };
    let nx = numeric_gradient(x.data(), FD_STEP, |d| dot(fwd(&with(&x, d), &weight, &bias).data(), w.data()));
    let nw = numeric_gradient(&weight, FD_STEP, |d| dot(fwd(&x, d, &bias).data(), w.data()));
    let nb = numeric_gradient(&bias, FD_STEP, |d| dot(fwd(&x, &weight, d).data(), w.data()));
    let rel_error = relative_error(dx.data(), &nx)
        .max(relative_error(&dw, &nw))
        .max(relative_error(&db, &nb));
    Ok(GradCheck {
        primitive,
        shape: x.shape(),
        rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes_on_many_configurations() {
        for p in Primitive::ALL {
            for seed in 0..8 {
                let c = check(p, seed).unwrap();
                assert!(c.rel_error < 1e-4, "{c:?}");
            }
        }
    }

    #[test]
    fn spec_example_conv_2x1x5x5_kernel_3() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = uniform_tensor([2, 1, 5, 5], &mut rng);
        let weight: Vec<f64> = (0..9 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias = vec![0.1, -0.2];
        let geom = ConvGeom::new(3, 1, 1);
        let p = ConvParams { weight: &weight, bias: &bias, in_channels: 1, out_channels: 2, geom };
        let y = ops::conv2d_forward(&x, &p).unwrap();
        let w = uniform_tensor(y.shape(), &mut rng);
        let (mut dw, mut db) = (vec![0.0; 18], vec![0.0; 2]);
        let dx = ops::conv2d_backward(&x, &p, &w, &mut dw, &mut db).unwrap();
        let loss = |x: &Tensor4, wt: &[f64]| {
            let p = ConvParams { weight: wt, bias: &bias, in_channels: 1, out_channels: 2, geom };
            dot(ops::conv2d_forward(x, &p).unwrap().data(), w.data())
        };
        let nx = numeric_gradient(x.data(), FD_STEP, |d| loss(&with(&x, d), &weight));
        let nw = numeric_gradient(&weight, FD_STEP, |d| loss(&x, d));
        assert!(relative_error(dx.data(), &nx) < 1e-4);
        assert!(relative_error(&dw, &nw) < 1e-4);
    }

    #[test]
    fn relative_error_of_identical_vectors_is_zero() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }
}
