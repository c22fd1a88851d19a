//! Generator (U-Net), PatchGAN discriminator and residual refiner.
//!
//! Each network's `forward` returns its output together with a cache of the
//! intermediate activations; `backward` consumes that cache, accumulates
//! parameter gradients and returns the gradient with respect to the input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::layers::{Conv, ConvKind, Param};
use crate::ops::{self, ConvGeom};
use crate::tensor::Tensor4;

/// Tag of the depth encoding the generator was trained on.
pub const DEPTH_ENCODING: &str = "linear-clamp-v1";
/// Tag of the resampling used between crop and generator resolution.
pub const RESIZE_METHOD: &str = "bilinear-halfpixel-v1";

const DOWN: ConvGeom = ConvGeom {
    kernel: 4,
    stride: 2,
    pad: 1,
};
const SAME3: ConvGeom = ConvGeom {
    kernel: 3,
    stride: 1,
    pad: 1,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// Square generator resolution.
    pub image_size: usize,
    pub gen_base: usize,
    pub gen_depth: usize,
    pub disc_base: usize,
    pub disc_downs: usize,
    pub refiner_width: usize,
    pub refiner_iterations: usize,
    /// Range mapped to +1 by the depth encoding, in metres.
    pub max_range: f64,
    pub depth_encoding: String,
    pub resize: String,
}

impl ArchConfig {
    /// Desk-scale configuration: the discriminator's receptive field is
    /// about a quarter of the image side.
    pub fn desk(image_size: usize) -> Self {
        Self {
            image_size,
            gen_base: 16,
            gen_depth: 3,
            disc_base: 16,
            disc_downs: desk_disc_downs(image_size),
            refiner_width: 8,
            refiner_iterations: 3,
            max_range: depthvision_core::densify::DEFAULT_MAX_RANGE,
            depth_encoding: DEPTH_ENCODING.into(),
            resize: RESIZE_METHOD.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NeuralError::Config(m.into()));
        if self.gen_base == 0 || self.disc_base == 0 || self.refiner_width == 0 {
            return bad("network widths must be positive");
        }
        if self.gen_depth == 0 || self.gen_depth > 8 {
            return bad("gen_depth must be in 1..=8");
        }
        if self.disc_downs == 0 || self.disc_downs > 8 {
            return bad("disc_downs must be in 1..=8");
        }
        if self.image_size == 0 || self.image_size % (1 << self.gen_depth) != 0 {
            return Err(NeuralError::Indivisible {
                height: self.image_size,
                width: self.image_size,
                factor: 1 << self.gen_depth,
            });
        }
        if self.image_size % (1 << self.disc_downs) != 0 {
            return bad("image_size must be divisible by 2^disc_downs");
        }
        if !(self.max_range.is_finite() && self.max_range > 0.0) {
            return bad("max_range must be positive");
        }
        if self.depth_encoding != DEPTH_ENCODING || self.resize != RESIZE_METHOD {
            return bad("unsupported depth encoding or resize tag");
        }
        Ok(())
    }

    /// Side of the discriminator's logit grid.
    pub fn logit_grid(&self) -> usize {
        self.image_size >> self.disc_downs
    }

    /// Receptive field of one logit, in input pixels.
    pub fn receptive_field(&self) -> usize {
        (0..self.disc_downs).fold(SAME3.kernel, |r, _| (r - 1) * DOWN.stride + DOWN.kernel)
    }
}

/// Number of stride-2 discriminator stages whose receptive field is closest
/// to a quarter of `image_size`, among those dividing it evenly.
fn desk_disc_downs(image_size: usize) -> usize {
    let rf = |n: usize| (0..n).fold(SAME3.kernel, |r, _| (r - 1) * DOWN.stride + DOWN.kernel);
    let target = image_size as f64 / 4.0;
    (1..=6)
        .filter(|&n| image_size % (1 << n) == 0)
        .min_by(|&a, &b| (rf(a) as f64 - target).abs().total_cmp(&(rf(b) as f64 - target).abs()))
        .unwrap_or(1)
}

fn widths(base: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| (base << i).min(8 * base)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorNet {
    /// Encoder stage `i` maps resolution `H / 2^i` to `H / 2^(i+1)`.
    pub encoder: Vec<Conv>,
    /// Decoder stage `j` maps resolution `H / 2^(j+1)` to `H / 2^j`.
    pub decoder: Vec<Conv>,
}

pub struct GeneratorCache {
    enc_in: Vec<Tensor4>,
    enc_pre: Vec<Tensor4>,
    /// Decoder inputs and pre-activations indexed by stage.
    dec_in: Vec<Tensor4>,
    dec_pre: Vec<Tensor4>,
    out: Tensor4,
}

impl GeneratorNet {
    pub fn new(base: usize, depth: usize, rng: &mut ChaCha8Rng) -> Self {
        let c = widths(base, depth);
        let mut encoder = Vec::with_capacity(depth);
        let mut cin = 1;
        for &co in &c {
            encoder.push(Conv::new(ConvKind::Forward, cin, co, DOWN, rng));
            cin = co;
        }
        let mut decoder: Vec<Conv> = Vec::with_capacity(depth);
        for j in 0..depth {
            let cin = if j == depth - 1 { c[depth - 1] } else { 2 * c[j] };
            let cout = if j == 0 { 3 } else { c[j - 1] };
            decoder.push(Conv::new(ConvKind::Transposed, cin, cout, DOWN, rng));
        }
        Self { encoder, decoder }
    }

    pub fn depth(&self) -> usize {
        self.encoder.len()
    }

    pub fn forward(&self, x: &Tensor4) -> Result<(Tensor4, GeneratorCache)> {
        let depth = self.depth();
        let factor = 1 << depth;
        if x.channels() != 1 {
            return Err(NeuralError::Shape {
                op: "generator",
                left: x.shape().to_vec(),
                right: vec![1],
            });
        }
        if x.height() % factor != 0 || x.width() % factor != 0 || x.height() == 0 || x.width() == 0 {
            return Err(NeuralError::Indivisible {
                height: x.height(),
                width: x.width(),
                factor,
            });
        }
        let mut enc_in = Vec::with_capacity(depth);
        let mut enc_pre = Vec::with_capacity(depth);
        let mut skips: Vec<Tensor4> = Vec::with_capacity(depth);
        let mut h = x.clone();
        for conv in &self.encoder {
            let pre = conv.forward(&h)?;
            let next = ops::leaky_relu_forward(&pre);
            enc_in.push(h);
            enc_pre.push(pre);
            skips.push(next.clone());
            h = next;
        }
        let mut dec_in: Vec<Option<Tensor4>> = vec![None; depth];
        let mut dec_pre: Vec<Option<Tensor4>> = vec![None; depth];
        let mut d = h;
        let mut out = None;
        for j in (0..depth).rev() {
            let pre = self.decoder[j].forward(&d)?;
            dec_in[j] = Some(d);
            if j > 0 {
                d = ops::concat_forward(&ops::relu_forward(&pre), &skips[j - 1])?;
            } else {
                out = Some(ops::tanh_forward(&pre));
                d = Tensor4::zeros([0, 0, 0, 0]);
            }
            dec_pre[j] = Some(pre);
        }
        let out = out.expect("depth >= 1");
        let cache = GeneratorCache {
            enc_in,
            enc_pre,
            dec_in: dec_in.into_iter().map(|t| t.expect("filled")).collect(),
            dec_pre: dec_pre.into_iter().map(|t| t.expect("filled")).collect(),
            out: out.clone(),
        };
        Ok((out, cache))
    }

    pub fn backward(&mut self, cache: &GeneratorCache, dout: &Tensor4) -> Result<Tensor4> {
        let depth = self.depth();
        let mut dskips: Vec<Option<Tensor4>> = vec![None; depth];
        let mut dpre = ops::tanh_backward(&cache.out, dout)?;
        for j in 0..depth {
            let dd = self.decoder[j].backward(&cache.dec_in[j], &dpre)?;
            if j == depth - 1 {
                add_into(&mut dskips[j], dd);
            } else {
                let ca = self.decoder[j + 1].out_channels;
                let (da, dskip) = ops::concat_backward(&dd, ca)?;
                add_into(&mut dskips[j], dskip);
                dpre = ops::relu_backward(&cache.dec_pre[j + 1], &da)?;
            }
        }
        for i in (0..depth).rev() {
            let dh = dskips[i].take().expect("every stage feeds the decoder");
            let dp = ops::leaky_relu_backward(&cache.enc_pre[i], &dh)?;
            let dx = self.encoder[i].backward(&cache.enc_in[i], &dp)?;
            if i == 0 {
                return Ok(dx);
            }
            add_into(&mut dskips[i - 1], dx);
        }
        unreachable!("depth >= 1")
    }

    pub fn params(&self) -> Vec<&Param> {
        self.encoder.iter().chain(&self.decoder).flat_map(Conv::params_ref).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.encoder.iter_mut().chain(&mut self.decoder).flat_map(Conv::params_mut).collect()
    }
}

fn add_into(slot: &mut Option<Tensor4>, t: Tensor4) {
    match slot {
        Some(acc) => acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b),
        None => *slot = Some(t),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorNet {
    /// Stride-2 stages followed by a final stride-1 conv to one channel.
    pub layers: Vec<Conv>,
}

pub struct DiscriminatorCache {
    inputs: Vec<Tensor4>,
    pre: Vec<Tensor4>,
}

impl DiscriminatorNet {
    pub fn new(base: usize, downs: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(downs + 1);
        let mut cin = 4;
        for co in widths(base, downs) {
            layers.push(Conv::new(ConvKind::Forward, cin, co, DOWN, rng));
            cin = co;
        }
        layers.push(Conv::new(ConvKind::Forward, cin, 1, SAME3, rng));
        Self { layers }
    }

    /// Logit grid for `(depth, rgb)` pairs.
    pub fn forward(&self, depth: &Tensor4, rgb: &Tensor4) -> Result<(Tensor4, DiscriminatorCache)> {
        if depth.channels() != 1 || rgb.channels() != 3 {
            return Err(NeuralError::Shape {
                op: "discriminator",
                left: depth.shape().to_vec(),
                right: rgb.shape().to_vec(),
            });
        }
        let mut h = ops::concat_forward(depth, rgb)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, conv) in self.layers.iter().enumerate() {
            let p = conv.forward(&h)?;
            let next = if i < last { ops::leaky_relu_forward(&p) } else { p.clone() };
            inputs.push(h);
            pre.push(p);
            h = next;
        }
        Ok((h, DiscriminatorCache { inputs, pre }))
    }

    /// Gradient with respect to the RGB input; parameter gradients accumulate.
    pub fn backward(&mut self, cache: &DiscriminatorCache, dlogits: &Tensor4) -> Result<Tensor4> {
        let last = self.layers.len() - 1;
        let mut d = dlogits.clone();
        for i in (0..=last).rev() {
            if i < last {
                d = ops::leaky_relu_backward(&cache.pre[i], &d)?;
            }
            d = self.layers[i].backward(&cache.inputs[i], &d)?;
        }
        Ok(ops::concat_backward(&d, 1)?.1)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Conv::params_ref).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Conv::params_mut).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinerNet {
    pub layers: [Conv; 3],
}

struct RefinerPass {
    inputs: [Tensor4; 3],
    pre: [Tensor4; 2],
    residual: Tensor4,
    /// `x + r` before clamping.
    sum: Tensor4,
}

pub struct RefineCache {
    passes: Vec<RefinerPass>,
}

impl RefinerNet {
    pub fn new(width: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            layers: [
                Conv::new(ConvKind::Forward, 4, width, SAME3, rng),
                Conv::new(ConvKind::Forward, width, width, SAME3, rng),
                Conv::new(ConvKind::Forward, width, 3, SAME3, rng),
            ],
        }
    }

    /// Sets every weight and bias to zero, making the residual identically 0.
    pub fn zero(&mut self) {
        for p in self.params_mut() {
            p.data.fill(0.0);
        }
    }

    /// `iterations` times: `x = clamp(x + R([x, depth]), -1, 1)`, with one
    /// set of weights shared by every iteration.
    pub fn refine(&self, x: &Tensor4, depth: &Tensor4, iterations: usize) -> Result<(Tensor4, RefineCache)> {
        if x.channels() != 3 {
            return Err(NeuralError::Shape {
                op: "refine",
                left: x.shape().to_vec(),
                right: vec![3],
            });
        }
        let mut x = x.clone();
        let mut passes = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let inp = ops::concat_forward(&x, depth)?;
            let p0 = self.layers[0].forward(&inp)?;
            let a0 = ops::relu_forward(&p0);
            let p1 = self.layers[1].forward(&a0)?;
            let a1 = ops::relu_forward(&p1);
            let residual = ops::tanh_forward(&self.layers[2].forward(&a1)?);
            let mut sum = x;
            sum.data_mut().iter_mut().zip(residual.data()).for_each(|(s, r)| *s += r);
            x = ops::clamp_unit_forward(&sum);
            passes.push(RefinerPass {
                inputs: [inp, a0, a1],
                pre: [p0, p1],
                residual,
                sum,
            });
        }
        Ok((x, RefineCache { passes }))
    }

    /// Gradient with respect to the initial estimate.
    pub fn backward(&mut self, cache: &RefineCache, dout: &Tensor4) -> Result<Tensor4> {
        let mut dx = dout.clone();
        for pass in cache.passes.iter().rev() {
            let ds = ops::clamp_unit_backward(&pass.sum, &dx)?;
            let d = ops::tanh_backward(&pass.residual, &ds)?;
            let d = self.layers[2].backward(&pass.inputs[2], &d)?;
            let d = ops::relu_backward(&pass.pre[1], &d)?;
            let d = self.layers[1].backward(&pass.inputs[1], &d)?;
            let d = ops::relu_backward(&pass.pre[0], &d)?;
            let d = self.layers[0].backward(&pass.inputs[0], &d)?;
            let (dxin, _) = ops::concat_backward(&d, 3)?;
            dx = ds;
            dx.data_mut().iter_mut().zip(dxin.data()).for_each(|(a, b)| *a += b);
        }
        Ok(dx)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Conv::params_ref).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Conv::params_mut).collect()
    }
}

/// The three networks of the synthesis stage.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub arch: ArchConfig,
    pub generator: GeneratorNet,
    pub discriminator: DiscriminatorNet,
    pub refiner: RefinerNet,
}

impl Model {
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let generator = GeneratorNet::new(arch.gen_base, arch.gen_depth, &mut rng);
        let discriminator = DiscriminatorNet::new(arch.disc_base, arch.disc_downs, &mut rng);
        let refiner = RefinerNet::new(arch.refiner_width, &mut rng);
        Ok(Self {
            arch,
            generator,
            discriminator,
            refiner,
        })
    }

    /// Generator output followed by the configured refiner iterations.
    pub fn synthesize(&self, depth: &Tensor4) -> Result<Tensor4> {
        let (g, _) = self.generator.forward(depth)?;
        Ok(self.refiner.refine(&g, depth, self.arch.refiner_iterations)?.0)
    }

    /// Generator output without refinement.
    pub fn generate(&self, depth: &Tensor4) -> Result<Tensor4> {
        Ok(self.generator.forward(depth)?.0)
    }

    /// Every parameter in declaration order: generator, discriminator, refiner.
    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.generator.params();
        v.extend(self.discriminator.params());
        v.extend(self.refiner.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.generator.params_mut();
        v.extend(self.discriminator.params_mut());
        v.extend(self.refiner.params_mut());
        v
    }
}
