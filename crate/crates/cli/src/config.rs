//! Effective run configuration: defaults, then a JSON file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use depthvision_core::lama::{FusionMode, LamaConfig, DEFAULT_L_HIGH, DEFAULT_L_LOW};
use depthvision_core::simgen::{DatasetOptions, DEFAULT_SAFETY_DISTANCE, TRAINING_LUMINANCE_THRESHOLD};
use depthvision_neural::nets::{DEPTH_ENCODING, RESIZE_METHOD};
use depthvision_neural::{AdamConfig, ArchConfig, LossWeights, TrainConfig};
use depthvision_vlmqa::{EvalMode, PromptTemplates};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub scenes: usize,
    pub width: usize,
    pub height: usize,
    pub night_fraction: f64,
    pub val_fraction: f64,
    pub night_ambient: f64,
    pub noise_sigma: f64,
    pub safety_distance: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let d = DatasetOptions::default();
        Self {
            scenes: d.scenes,
            width: d.width,
            height: d.height,
            night_fraction: d.night_fraction,
            val_fraction: d.val_fraction,
            night_ambient: d.night_ambient,
            noise_sigma: d.noise_sigma,
            safety_distance: DEFAULT_SAFETY_DISTANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LamaSection {
    pub l_low: f64,
    pub l_high: f64,
    pub mode: FusionMode,
    /// Day-labelled scenes skip fusion during evaluation.
    pub daytime_bypass: bool,
}

impl Default for LamaSection {
    fn default() -> Self {
        Self {
            l_low: DEFAULT_L_LOW,
            l_high: DEFAULT_L_HIGH,
            mode: FusionMode::Full,
            daytime_bypass: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    /// Square generator resolution.
    pub resolution: usize,
    pub base: usize,
    pub depth: usize,
    pub disc_base: usize,
    pub disc_downs: usize,
    pub refiner_width: usize,
    pub refiner_iterations: usize,
    pub max_range: f64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        Self::from(&ArchConfig::desk(64))
    }
}

impl From<&ArchConfig> for GeneratorSection {
    fn from(a: &ArchConfig) -> Self {
        Self {
            resolution: a.image_size,
            base: a.gen_base,
            depth: a.gen_depth,
            disc_base: a.disc_base,
            disc_downs: a.disc_downs,
            refiner_width: a.refiner_width,
            refiner_iterations: a.refiner_iterations,
            max_range: a.max_range,
        }
    }
}

impl GeneratorSection {
    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            image_size: self.resolution,
            gen_base: self.base,
            gen_depth: self.depth,
            disc_base: self.disc_base,
            disc_downs: self.disc_downs,
            refiner_width: self.refiner_width,
            refiner_iterations: self.refiner_iterations,
            max_range: self.max_range,
            depth_encoding: DEPTH_ENCODING.into(),
            resize: RESIZE_METHOD.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_l1: f64,
    /// Day images darker than this are left out of training.
    pub min_luminance: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: t.steps,
            batch_size: t.batch_size,
            lr: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            lambda_l1: t.weights.lambda_l1,
            min_luminance: TRAINING_LUMINANCE_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub mode: EvalMode,
    /// Endpoint spec: an http(s) URL, `mock`, `mock:luminance[:seed]` or
    /// `replay:PATH`.
    pub endpoint: String,
    pub model: String,
    pub concurrency: usize,
    pub timeout_secs: u64,
    pub prompts: PromptTemplates,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            mode: EvalMode::Full,
            endpoint: "mock".into(),
            model: "mock".into(),
            concurrency: 4,
            timeout_secs: 30,
            prompts: PromptTemplates::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    /// Side of the centred square crop applied after projection; `None`
    /// keeps the full image.
    pub crop_size: Option<usize>,
    pub simulate: SimulateSection,
    pub lama: LamaSection,
    pub generator: GeneratorSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

fn field_err(field: &str, msg: &str) -> CliError {
    CliError::config(format!("config field `{field}`: {msg}"))
}

fn unit(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(field_err(field, &format!("must be in [0, 1], got {v}")))
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(field_err(field, &format!("must be positive, got {v}")))
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Checks every section against the preconditions of the module it
    /// configures; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let s = &self.simulate;
        if s.width == 0 || s.height == 0 {
            return Err(field_err("simulate.width", "image size must be positive"));
        }
        unit("simulate.night_fraction", s.night_fraction)?;
        unit("simulate.val_fraction", s.val_fraction)?;
        unit("simulate.night_ambient", s.night_ambient)?;
        if !(s.noise_sigma.is_finite() && s.noise_sigma >= 0.0) {
            return Err(field_err("simulate.noise_sigma", "must be nonnegative"));
        }
        positive("simulate.safety_distance", s.safety_distance)?;

        let l = &self.lama;
        unit("lama.l_low", l.l_low)?;
        unit("lama.l_high", l.l_high)?;
        if l.l_low >= l.l_high {
            return Err(field_err("lama.l_high", "must exceed lama.l_low"));
        }

        let g = &self.generator;
        if g.resolution == 0 || g.resolution % (1 << g.depth.min(16)) != 0 {
            return Err(field_err(
                "generator.resolution",
                &format!("must be a positive multiple of 2^depth = {}", 1u64 << g.depth.min(16)),
            ));
        }
        for (name, v) in [
            ("generator.base", g.base),
            ("generator.depth", g.depth),
            ("generator.disc_base", g.disc_base),
            ("generator.disc_downs", g.disc_downs),
            ("generator.refiner_width", g.refiner_width),
        ] {
            if v == 0 {
                return Err(field_err(name, "must be positive"));
            }
        }
        positive("generator.max_range", g.max_range)?;
        g.arch()
            .validate()
            .map_err(|e| field_err("generator", &e.to_string()))?;

        let t = &self.train;
        if t.batch_size == 0 {
            return Err(field_err("train.batch_size", "must be positive"));
        }
        positive("train.lr", t.lr)?;
        if !(0.0..1.0).contains(&t.beta1) {
            return Err(field_err("train.beta1", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&t.beta2) {
            return Err(field_err("train.beta2", "must be in [0, 1)"));
        }
        if !(t.lambda_l1.is_finite() && t.lambda_l1 >= 0.0) {
            return Err(field_err("train.lambda_l1", "must be nonnegative"));
        }
        unit("train.min_luminance", t.min_luminance)?;

        if self.eval.concurrency == 0 {
            return Err(field_err("eval.concurrency", "must be positive"));
        }
        if let Some(c) = self.crop_size {
            if c == 0 {
                return Err(field_err("crop_size", "must be positive"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn dataset_options(&self) -> DatasetOptions {
        let s = &self.simulate;
        DatasetOptions {
            scenes: s.scenes,
            seed: self.seed,
            width: s.width,
            height: s.height,
            night_fraction: s.night_fraction,
            val_fraction: s.val_fraction,
            night_ambient: s.night_ambient,
            noise_sigma: s.noise_sigma,
            safety_distance: s.safety_distance,
            ..DatasetOptions::default()
        }
    }

    pub fn lama_config(&self) -> LamaConfig {
        LamaConfig {
            l_low: self.lama.l_low,
            l_high: self.lama.l_high,
            mode: self.lama.mode,
            daytime_bypass: self.lama.daytime_bypass,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            steps: t.steps,
            batch_size: t.batch_size,
            seed: self.seed,
            adam: AdamConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                ..AdamConfig::default()
            },
            weights: LossWeights {
                lambda_l1: t.lambda_l1,
                ..LossWeights::default()
            },
            freeze_discriminator: false,
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_hash_is_stable() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.hash(), PipelineConfig::default().hash());
        let mut d = c.clone();
        d.seed = 1;
        assert_ne!(c.hash(), d.hash());
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.train.lambda_l1, 100.0);
        assert_eq!(c.train.min_luminance, 0.4);
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"seed": 3, "train": {"steps": 10}}"#).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.steps, 10);
        assert_eq!(c.train.batch_size, 16);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sede": 3}"#).is_err());
    }

    #[test]
    fn validation_names_field() {
        let mut c = PipelineConfig::default();
        c.lama.l_low = 0.5;
        let e = c.validate().unwrap_err();
        assert!(e.message.contains("lama.l_high"), "{e}");
        let mut c = PipelineConfig::default();
        c.train.batch_size = 0;
        assert!(c.validate().unwrap_err().message.contains("train.batch_size"));
        let mut c = PipelineConfig::default();
        c.generator.resolution = 60;
        assert!(c.validate().unwrap_err().message.contains("generator.resolution"));
        let mut c = PipelineConfig::default();
        c.simulate.night_ambient = 2.0;
        assert!(c.validate().unwrap_err().message.contains("simulate.night_ambient"));
    }
}
