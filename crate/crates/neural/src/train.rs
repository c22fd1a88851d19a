//! Joint adversarial + L1 training of generator, refiner and discriminator.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::AdamConfig;
use crate::data::TrainingPair;
use crate::error::{NeuralError, Result};
use crate::layers::Param;
use crate::nets::Model;
use crate::ops;
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_l1: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_l1: 100.0,
            adversarial: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Seeds the batch order; the weight init seed lives with the model.
    pub seed: u64,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    /// Keep the discriminator's weights fixed (diagnostics only).
    pub freeze_discriminator: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            seed: 0,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            freeze_discriminator: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(NeuralError::Config("batch_size must be positive".into()));
        }
        let w = self.weights;
        if !(w.lambda_l1.is_finite() && w.lambda_l1 >= 0.0 && w.adversarial.is_finite() && w.adversarial >= 0.0) {
            return Err(NeuralError::Config("loss weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_l1: f64,
}

fn zero_grads(params: Vec<&mut Param>) {
    params.into_iter().for_each(Param::zero_grad);
}

fn step_all(params: Vec<&mut Param>, cfg: &AdamConfig) -> Result<()> {
    params.into_iter().try_for_each(|p| p.step(cfg))
}

fn check_finite(step: u64, what: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(NeuralError::Diverged { step, what, value })
    }
}

/// One discriminator update followed by one generator + refiner update.
///
/// Losses are those computed during the step, before the updates land.
pub fn gan_train_step(
    model: &mut Model,
    depth: &Tensor4,
    target: &Tensor4,
    cfg: &TrainConfig,
    step: u64,
) -> Result<LossRecord> {
    if depth.batch() == 0 {
        return Err(NeuralError::Config("empty batch".into()));
    }
    let (g_out, g_cache) = model.generator.forward(depth)?;
    let (fake, r_cache) = model.refiner.refine(&g_out, depth, model.arch.refiner_iterations)?;

    zero_grads(model.discriminator.params_mut());
    let (real_logits, real_cache) = model.discriminator.forward(depth, target)?;
    let (fake_logits, fake_cache) = model.discriminator.forward(depth, &fake)?;
    let (l_real, g_real) = ops::bce_with_logits(&real_logits, 1.0);
    let (l_fake, g_fake) = ops::bce_with_logits(&fake_logits, 0.0);
    let d_loss = 0.5 * (l_real + l_fake);
    check_finite(step, "d_loss", d_loss)?;
    if !cfg.freeze_discriminator {
        model.discriminator.backward(&real_cache, &g_real.map(|g| 0.5 * g))?;
        model.discriminator.backward(&fake_cache, &g_fake.map(|g| 0.5 * g))?;
        step_all(model.discriminator.params_mut(), &cfg.adam)?;
    }

    zero_grads(model.generator.params_mut());
    zero_grads(model.refiner.params_mut());
    let (logits, cache) = model.discriminator.forward(depth, &fake)?;
    let (g_adv, g_logits) = ops::bce_with_logits(&logits, 1.0);
    let (g_l1, d_l1) = ops::l1_loss(&fake, target)?;
    check_finite(step, "g_adv", g_adv)?;
    check_finite(step, "g_l1", g_l1)?;
    let w = cfg.weights;
    let mut dfake = model.discriminator.backward(&cache, &g_logits.map(|g| w.adversarial * g))?;
    dfake
        .data_mut()
        .iter_mut()
        .zip(d_l1.data())
        .for_each(|(a, b)| *a += w.lambda_l1 * b);
    // only the generator side learns from this pass
    zero_grads(model.discriminator.params_mut());
    let dg = model.refiner.backward(&r_cache, &dfake)?;
    model.generator.backward(&g_cache, &dg)?;
    step_all(model.generator.params_mut(), &cfg.adam)?;
    step_all(model.refiner.params_mut(), &cfg.adam)?;

    Ok(LossRecord {
        step,
        d_loss,
        g_adv,
        g_l1,
    })
}

/// Stacks the depth inputs and targets of `pairs[indices]`.
pub fn batch(pairs: &[TrainingPair], indices: &[usize]) -> Result<(Tensor4, Tensor4)> {
    let depth: Vec<_> = indices.iter().map(|&i| &pairs[i].depth).collect();
    let target: Vec<_> = indices.iter().map(|&i| &pairs[i].target).collect();
    Ok((Tensor4::stack(&depth)?, Tensor4::stack(&target)?))
}

/// Drives [`gan_train_step`] over shuffled mini-batches.
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    step: u64,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            model,
            config,
            step: 0,
            rng,
            order: Vec::new(),
            cursor: 0,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Next mini-batch indices; reshuffles at every epoch boundary.
    fn next_indices(&mut self, n: usize) -> Vec<usize> {
        let size = self.config.batch_size.min(n);
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor >= self.order.len() {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    pub fn train_step(&mut self, pairs: &[TrainingPair]) -> Result<LossRecord> {
        if pairs.is_empty() {
            return Err(NeuralError::Config("no training pairs".into()));
        }
        let idx = self.next_indices(pairs.len());
        let (depth, target) = batch(pairs, &idx)?;
        let rec = gan_train_step(&mut self.model, &depth, &target, &self.config, self.step)?;
        self.step += 1;
        Ok(rec)
    }

    /// Runs `config.steps` steps, reporting each loss record to `on_step`.
    pub fn fit(&mut self, pairs: &[TrainingPair], mut on_step: impl FnMut(&LossRecord)) -> Result<Vec<LossRecord>> {
        let mut history = Vec::with_capacity(self.config.steps as usize);
        for _ in 0..self.config.steps {
            let rec = self.train_step(pairs)?;
            on_step(&rec);
            history.push(rec);
        }
        Ok(history)
    }
}

/// Mean absolute error of the model's output over `pairs`, with or without
/// the refiner.
pub fn mean_l1(model: &Model, pairs: &[TrainingPair], refine: bool) -> Result<f64> {
    if pairs.is_empty() {
        return Err(NeuralError::Config("no evaluation pairs".into()));
    }
    let mut total = 0.0;
    for chunk in pairs.chunks(8) {
        let idx: Vec<usize> = (0..chunk.len()).collect();
        let (depth, target) = batch(chunk, &idx)?;
        let out = if refine {
            model.synthesize(&depth)?
        } else {
            model.generate(&depth)?
        };
        let (l, _) = ops::l1_loss(&out, &target)?;
        total += l * chunk.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// Mean discriminator logit on real pairs and on synthesized pairs.
pub fn mean_logits(model: &Model, pairs: &[TrainingPair]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(NeuralError::Config("no evaluation pairs".into()));
    }
    let (mut real, mut fake, mut count) = (0.0, 0.0, 0usize);
    for chunk in pairs.chunks(8) {
        let idx: Vec<usize> = (0..chunk.len()).collect();
        let (depth, target) = batch(chunk, &idx)?;
        let synth = model.synthesize(&depth)?;
        let (lr, _) = model.discriminator.forward(&depth, &target)?;
        let (lf, _) = model.discriminator.forward(&depth, &synth)?;
        real += lr.data().iter().sum::<f64>();
        fake += lf.data().iter().sum::<f64>();
        count += lr.data().len();
    }
    Ok((real / count as f64, fake / count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::uniform_tensor;
    use crate::nets::ArchConfig;
    use depthvision_core::ImageSigned;

    fn small_arch(size: usize) -> ArchConfig {
        ArchConfig {
            gen_base: 4,
            gen_depth: 2,
            disc_base: 4,
            disc_downs: 2,
            refiner_width: 4,
            ..ArchConfig::desk(size)
        }
    }

    /// Smooth random depth images with the depth broadcast as the target.
    fn identity_pairs(n: usize, size: usize, seed: u64) -> Vec<TrainingPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let t = uniform_tensor([1, 1, 2, 2], &mut rng);
                let coarse = ImageSigned::new(2, 2, 1, t.into_data()).unwrap();
                let depth = coarse.resize_bilinear(size, size).unwrap();
                let mut target = depth.data().to_vec();
                target.extend_from_slice(depth.data());
                target.extend_from_slice(depth.data());
                TrainingPair {
                    depth,
                    target: ImageSigned::new(size, size, 3, target).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn frozen_zero_discriminator_gives_ln2() {
        let mut model = Model::new(small_arch(16), 0).unwrap();
        for p in model.discriminator.params_mut() {
            p.data.fill(0.0);
        }
        let cfg = TrainConfig {
            weights: LossWeights {
                lambda_l1: 0.0,
                adversarial: 1.0,
            },
            freeze_discriminator: true,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let pairs = identity_pairs(2, 16, 1);
        let (d, t) = batch(&pairs, &[0, 1]).unwrap();
        let rec = gan_train_step(&mut model, &d, &t, &cfg, 0).unwrap();
        assert!((rec.g_adv - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((rec.d_loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(model.discriminator.params().iter().all(|p| p.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn identity_fit_halves_l1() {
        let pairs = identity_pairs(8, 16, 2);
        let model = Model::new(small_arch(16), 1).unwrap();
        let cfg = TrainConfig {
            steps: 200,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(model, cfg).unwrap();
        let history = trainer.fit(&pairs, |_| {}).unwrap();
        let first = history[0].g_l1;
        let last = mean_l1(&trainer.model, &pairs, true).unwrap();
        assert!(last < 0.5 * first, "initial {first}, final {last}");
    }

    #[test]
    fn training_is_deterministic() {
        let pairs = identity_pairs(4, 16, 3);
        let run = || {
            let cfg = TrainConfig {
                steps: 5,
                batch_size: 2,
                seed: 4,
                ..TrainConfig::default()
            };
            let mut t = Trainer::new(Model::new(small_arch(16), 7).unwrap(), cfg).unwrap();
            (t.fit(&pairs, |_| {}).unwrap(), t.model)
        };
        let (ha, ma) = run();
        let (hb, mb) = run();
        assert_eq!(ha, hb);
        assert_eq!(ma, mb);
    }

    #[test]
    fn non_finite_input_reports_divergence() {
        let mut model = Model::new(small_arch(16), 0).unwrap();
        let d = Tensor4::zeros([1, 1, 16, 16]);
        let mut t = Tensor4::zeros([1, 3, 16, 16]);
        t.data_mut()[0] = f64::NAN;
        let err = gan_train_step(&mut model, &d, &t, &TrainConfig::default(), 17).unwrap_err();
        assert!(matches!(err, NeuralError::Diverged { step: 17, .. }), "{err}");
        assert!(err.to_string().contains("training diverged at step 17"));
    }

    #[test]
    fn epoch_order_covers_every_pair() {
        let cfg = TrainConfig {
            batch_size: 3,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(Model::new(small_arch(16), 0).unwrap(), cfg).unwrap();
        let mut seen: Vec<usize> = (0..3).flat_map(|_| t.next_indices(9)).collect();
        seen.sort();
        assert_eq!(seen, (0..9).collect::<Vec<_>>());
    }
}
