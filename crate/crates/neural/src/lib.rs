//! Desk-scale conditional GAN for depth-to-RGB synthesis: a U-Net generator,
//! a PatchGAN discriminator and a residual refiner, trained with an
//! adversarial + L1 objective on a small self-contained tensor kernel.
//!
//! All arithmetic is `f64`; kernels reduce in a fixed order, so training with
//! a fixed seed is bitwise reproducible.

pub mod adam;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod nets;
pub mod ops;
pub mod tensor;
pub mod train;
pub mod weights;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use data::{make_pair, pair_from_cloud, synthesize, TrainingPair};
pub use error::{NeuralError, Result};
pub use nets::{ArchConfig, DiscriminatorNet, GeneratorNet, Model, RefinerNet};
pub use tensor::Tensor4;
pub use train::{gan_train_step, mean_l1, mean_logits, LossRecord, LossWeights, TrainConfig, Trainer};
pub use weights::{load_weights, save_weights};
