//! Forward and backward kernels.
//!
//! Convolutions lower to matrix products over im2col buffers. Every backward
//! function takes the upstream gradient and returns (or accumulates) the
//! gradients with respect to its inputs and weights. Reductions always run in
//! a fixed order so results are bitwise reproducible.

use crate::error::{NeuralError, Result};
use crate::tensor::Tensor4;

pub const LEAKY_SLOPE: f64 = 0.2;

/// `c = a * b + beta * c` for row-major `c` of shape `m x n`, with `a` and `b`
/// addressed through explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a convolution window sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            kernel,
            stride,
            pad,
        }
    }

    /// Output size of a convolution over `len` input pixels.
    pub fn conv_out(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.pad;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    /// Output size of a transposed convolution over `len` input pixels.
    pub fn tconv_out(&self, len: usize) -> Option<usize> {
        ((len - 1) * self.stride + self.kernel).checked_sub(2 * self.pad)
    }
}

/// Unfolds `img` (`channels x h x w`) into `(channels * k * k) x (oh * ow)`.
#[allow(clippy::too_many_arguments)]
fn im2col(img: &[f64], channels: usize, h: usize, w: usize, g: ConvGeom, oh: usize, ow: usize, cols: &mut [f64]) {
    let k = g.kernel;
    let plane = oh * ow;
    for c in 0..channels {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * plane;
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &img[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix >= 0 && ix < w as isize {
                            src[ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters and accumulates columns into `img`.
#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], channels: usize, h: usize, w: usize, g: ConvGeom, oh: usize, ow: usize, img: &mut [f64]) {
    let k = g.kernel;
    let plane = oh * ow;
    for c in 0..channels {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((c * k + ki) * k + kj) * plane;
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (c * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            img[base + ix as usize] += cols[row + oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> NeuralError {
    NeuralError::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

/// Convolution weights `(out, in, k, k)` and bias `(out)`.
pub struct ConvParams<'a> {
    pub weight: &'a [f64],
    pub bias: &'a [f64],
    pub in_channels: usize,
    pub out_channels: usize,
    pub geom: ConvGeom,
}

impl ConvParams<'_> {
    fn check(&self, x: &Tensor4, op: &'static str) -> Result<()> {
        let k = self.geom.kernel;
        if self.weight.len() != self.out_channels * self.in_channels * k * k
            || self.bias.len() != self.out_channels
        {
            return Err(shape_err(
                op,
                &[self.out_channels, self.in_channels, k, k],
                &[self.weight.len(), self.bias.len()],
            ));
        }
        if x.channels() != self.in_channels {
            return Err(shape_err(op, &x.shape(), &[self.in_channels]));
        }
        Ok(())
    }
}

pub fn conv2d_forward(x: &Tensor4, p: &ConvParams) -> Result<Tensor4> {
    p.check(x, "conv2d")?;
    let [n, c, h, w] = x.shape();
    let (oh, ow) = match (p.geom.conv_out(h), p.geom.conv_out(w)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(shape_err("conv2d", &x.shape(), &[p.geom.kernel])),
    };
    let ckk = c * p.geom.kernel * p.geom.kernel;
    let plane = oh * ow;
    let mut cols = vec![0.0; ckk * plane];
    let mut y = Tensor4::zeros([n, p.out_channels, oh, ow]);
    for b in 0..n {
        im2col(x.item(b), c, h, w, p.geom, oh, ow, &mut cols);
        let yb = y.item_mut(b);
        for (o, row) in yb.chunks_exact_mut(plane).enumerate() {
            row.fill(p.bias[o]);
        }
        gemm(p.out_channels, ckk, plane, p.weight, (ckk, 1), &cols, (plane, 1), 1.0, yb);
    }
    Ok(y)
}

/// Returns `dx` and accumulates into `dweight` and `dbias`.
pub fn conv2d_backward(
    x: &Tensor4,
    p: &ConvParams,
    dy: &Tensor4,
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Result<Tensor4> {
    p.check(x, "conv2d_backward")?;
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (dy.height(), dy.width());
    if dy.shape() != [n, p.out_channels, oh, ow]
        || p.geom.conv_out(h) != Some(oh)
        || p.geom.conv_out(w) != Some(ow)
    {
        return Err(shape_err("conv2d_backward", &x.shape(), &dy.shape()));
    }
    let ckk = c * p.geom.kernel * p.geom.kernel;
    let plane = oh * ow;
    let mut cols = vec![0.0; ckk * plane];
    let mut dcols = vec![0.0; ckk * plane];
    let mut dx = Tensor4::zeros(x.shape());
    for b in 0..n {
        im2col(x.item(b), c, h, w, p.geom, oh, ow, &mut cols);
        let dyb = dy.item(b);
        gemm(p.out_channels, plane, ckk, dyb, (plane, 1), &cols, (1, plane), 1.0, dweight);
        for (o, row) in dyb.chunks_exact(plane).enumerate() {
            dbias[o] += row.iter().sum::<f64>();
        }
        gemm(ckk, p.out_channels, plane, p.weight, (1, ckk), dyb, (plane, 1), 0.0, &mut dcols);
        col2im(&dcols, c, h, w, p.geom, oh, ow, dx.item_mut(b));
    }
    Ok(dx)
}

/// Transposed-convolution weights `(in, out, k, k)` and bias `(out)`.
pub type TconvParams<'a> = ConvParams<'a>;

fn tconv_check(x: &Tensor4, p: &TconvParams, op: &'static str) -> Result<(usize, usize)> {
    let k = p.geom.kernel;
    if p.weight.len() != p.in_channels * p.out_channels * k * k || p.bias.len() != p.out_channels {
        return Err(shape_err(
            op,
            &[p.in_channels, p.out_channels, k, k],
            &[p.weight.len(), p.bias.len()],
        ));
    }
    if x.channels() != p.in_channels {
        return Err(shape_err(op, &x.shape(), &[p.in_channels]));
    }
    match (p.geom.tconv_out(x.height()), p.geom.tconv_out(x.width())) {
        (Some(a), Some(b)) if a > 0 && b > 0 => Ok((a, b)),
        _ => Err(shape_err(op, &x.shape(), &[k])),
    }
}

pub fn tconv2d_forward(x: &Tensor4, p: &TconvParams) -> Result<Tensor4> {
    let (oh, ow) = tconv_check(x, p, "tconv2d")?;
    let [n, cin, h, w] = x.shape();
    let cout = p.out_channels;
    let ckk = cout * p.geom.kernel * p.geom.kernel;
    let plane = h * w;
    let mut cols = vec![0.0; ckk * plane];
    let mut y = Tensor4::zeros([n, cout, oh, ow]);
    for b in 0..n {
        gemm(ckk, cin, plane, p.weight, (1, ckk), x.item(b), (plane, 1), 0.0, &mut cols);
        let yb = y.item_mut(b);
        col2im(&cols, cout, oh, ow, p.geom, h, w, yb);
        for (o, row) in yb.chunks_exact_mut(oh * ow).enumerate() {
            row.iter_mut().for_each(|v| *v += p.bias[o]);
        }
    }
    Ok(y)
}

/// Returns `dx` and accumulates into `dweight` and `dbias`.
pub fn tconv2d_backward(
    x: &Tensor4,
    p: &TconvParams,
    dy: &Tensor4,
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Result<Tensor4> {
    let (oh, ow) = tconv_check(x, p, "tconv2d_backward")?;
    let [n, cin, h, w] = x.shape();
    let cout = p.out_channels;
    if dy.shape() != [n, cout, oh, ow] {
        return Err(shape_err("tconv2d_backward", &[n, cout, oh, ow], &dy.shape()));
    }
    let ckk = cout * p.geom.kernel * p.geom.kernel;
    let plane = h * w;
    let mut dcols = vec![0.0; ckk * plane];
    let mut dx = Tensor4::zeros(x.shape());
    for b in 0..n {
        let dyb = dy.item(b);
        im2col(dyb, cout, oh, ow, p.geom, h, w, &mut dcols);
        gemm(cin, ckk, plane, p.weight, (ckk, 1), &dcols, (plane, 1), 0.0, dx.item_mut(b));
        gemm(cin, plane, ckk, x.item(b), (plane, 1), &dcols, (1, plane), 1.0, dweight);
        for (o, row) in dyb.chunks_exact(oh * ow).enumerate() {
            dbias[o] += row.iter().sum::<f64>();
        }
    }
    Ok(dx)
}

pub fn relu_forward(x: &Tensor4) -> Tensor4 {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor4, dy: &Tensor4) -> Result<Tensor4> {
    x.same_shape(dy, "relu_backward")?;
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    Ok(dx)
}

pub fn leaky_relu_forward(x: &Tensor4) -> Tensor4 {
    x.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

pub fn leaky_relu_backward(x: &Tensor4, dy: &Tensor4) -> Result<Tensor4> {
    x.same_shape(dy, "leaky_relu_backward")?;
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *d *= LEAKY_SLOPE;
        }
    }
    Ok(dx)
}

pub fn tanh_forward(x: &Tensor4) -> Tensor4 {
    x.map(f64::tanh)
}

/// Backward of tanh given its forward output `y`.
pub fn tanh_backward(y: &Tensor4, dy: &Tensor4) -> Result<Tensor4> {
    y.same_shape(dy, "tanh_backward")?;
    let mut dx = dy.clone();
    for (d, &t) in dx.data_mut().iter_mut().zip(y.data()) {
        *d *= 1.0 - t * t;
    }
    Ok(dx)
}

/// Concatenates along the channel axis.
pub fn concat_forward(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    let [n, ca, h, w] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if (n, h, w) != (nb, hb, wb) {
        return Err(shape_err("concat", &a.shape(), &b.shape()));
    }
    let mut out = Tensor4::zeros([n, ca + cb, h, w]);
    for i in 0..n {
        let dst = out.item_mut(i);
        dst[..a.item_len()].copy_from_slice(a.item(i));
        dst[a.item_len()..].copy_from_slice(b.item(i));
    }
    Ok(out)
}

/// Splits the upstream gradient of a concat back into its two inputs.
pub fn concat_backward(dy: &Tensor4, channels_a: usize) -> Result<(Tensor4, Tensor4)> {
    let [n, c, h, w] = dy.shape();
    if channels_a > c {
        return Err(shape_err("concat_backward", &dy.shape(), &[channels_a]));
    }
    let mut da = Tensor4::zeros([n, channels_a, h, w]);
    let mut db = Tensor4::zeros([n, c - channels_a, h, w]);
    let split = channels_a * h * w;
    for i in 0..n {
        da.item_mut(i).copy_from_slice(&dy.item(i)[..split]);
        db.item_mut(i).copy_from_slice(&dy.item(i)[split..]);
    }
    Ok((da, db))
}

/// Clamp to `[-1, 1]`; the gradient passes only where the input was inside.
pub fn clamp_unit_forward(x: &Tensor4) -> Tensor4 {
    x.map(|v| v.clamp(-1.0, 1.0))
}

pub fn clamp_unit_backward(x: &Tensor4, dy: &Tensor4) -> Result<Tensor4> {
    x.same_shape(dy, "clamp_backward")?;
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if !(-1.0..=1.0).contains(&v) {
            *d = 0.0;
        }
    }
    Ok(dx)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy of logits against a constant label, with its
/// gradient.
pub fn bce_with_logits(logits: &Tensor4, label: f64) -> (f64, Tensor4) {
    let n = logits.data().len() as f64;
    let mut loss = 0.0;
    let grad = logits.map(|z| (sigmoid(z) - label) / n);
    for &z in logits.data() {
        loss += z.max(0.0) - z * label + (-z.abs()).exp().ln_1p();
    }
    (loss / n, grad)
}

/// Mean absolute error and its gradient with respect to `pred`.
pub fn l1_loss(pred: &Tensor4, target: &Tensor4) -> Result<(f64, Tensor4)> {
    pred.same_shape(target, "l1_loss")?;
    let n = pred.data().len() as f64;
    let mut grad = Tensor4::zeros(pred.shape());
    let mut sum = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        sum += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((sum / n, grad))
}
