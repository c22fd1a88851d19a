//! Procedural stand-in for a driving simulator.
//!
//! Scenes are boxes on a ground plane seen by a co-located camera and
//! scanning LiDAR. Both sensors are ray cast against the same geometry so the
//! modalities agree pixel for pixel, and question/answer ground truth is
//! derived analytically from the same scene description.

mod qa;
mod render;
mod scene;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use qa::{
    closest_distance, count_question, exist_question, make_qa, object_question, visible_objects,
    Answer, QaCategory, QaSample, DEFAULT_SAFETY_DISTANCE,
};
pub use render::{
    cast_ray, darken, luminance_filter, passes_luminance_filter, render, render_lidar,
    render_lidar_labeled, render_rgb, Face, Hit, Rendered, Surface, TRAINING_LUMINANCE_THRESHOLD,
};
pub use scene::{
    lidar_to_camera_axes, LidarPattern, ObjectClass, SceneObject, SceneOptions, SceneSpec,
    SensorRig,
};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::image::ImageRgb;
use crate::ingest::{write_calibration, write_cloud_bin};
use crate::io::write_png;
use crate::lama::{mean_luminance, to_gray};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lighting {
    Day,
    Night,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub seed: u64,
    pub split: Split,
    pub lighting: Lighting,
    /// Ambient factor applied to `rgb_dark.png`.
    pub ambient: f64,
    pub day_luminance: f64,
    pub night_luminance: f64,
}

impl SceneEntry {
    /// Camera image matching the entry's lighting label.
    pub fn camera_file(&self) -> &'static str {
        match self.lighting {
            Lighting::Day => "rgb.png",
            Lighting::Night => "rgb_dark.png",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub safety_distance: f64,
    pub scenes: Vec<SceneEntry>,
}

impl DatasetManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::format(&path, format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub scenes: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Fraction of scenes labelled night.
    pub night_fraction: f64,
    /// Fraction of scenes in the validation split.
    pub val_fraction: f64,
    pub night_ambient: f64,
    pub noise_sigma: f64,
    pub safety_distance: f64,
    pub scene: SceneOptions,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            scenes: 8,
            seed: 0,
            width: 128,
            height: 128,
            night_fraction: 0.5,
            val_fraction: 0.25,
            night_ambient: 0.1,
            noise_sigma: 0.01,
            safety_distance: DEFAULT_SAFETY_DISTANCE,
            scene: SceneOptions::default(),
        }
    }
}

/// Everything simulated for one scene.
#[derive(Clone, Debug)]
pub struct SimulatedScene {
    pub spec: SceneSpec,
    pub day: ImageRgb,
    pub dark: ImageRgb,
    pub cloud: PointCloud,
    pub qa: Vec<QaSample>,
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Per-scene seeds derived from the dataset seed.
pub fn scene_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random()).collect()
}

pub fn simulate_scene(
    seed: u64,
    rig: SensorRig,
    opts: &DatasetOptions,
    ambient: f64,
    id: &str,
) -> Result<SimulatedScene> {
    let mut spec = SceneSpec::random(seed, rig, &opts.scene)?;
    spec.ambient = ambient;
    let day = render_rgb(&spec);
    let dark = darken(&day, ambient, opts.noise_sigma, seed ^ 0xD4_4C)?;
    let cloud = render_lidar(&spec);
    let qa = make_qa(&spec, id, opts.safety_distance);
    Ok(SimulatedScene {
        spec,
        day,
        dark,
        cloud,
        qa,
    })
}

/// Writes a dataset directory: one sub-directory per scene with `rgb.png`,
/// `rgb_dark.png`, `cloud.bin`, `calib.json` and `qa.json`, plus
/// `manifest.json`.
pub fn generate_dataset(out: &Path, opts: &DatasetOptions) -> Result<DatasetManifest> {
    if !(0.0..=1.0).contains(&opts.night_fraction) || !(0.0..=1.0).contains(&opts.val_fraction) {
        return Err(Error::InvalidArgument("fractions must be in [0, 1]".into()));
    }
    let rig = SensorRig::desk(opts.width, opts.height)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let seeds = scene_seeds(opts.seed, opts.scenes);
    let mut label_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5EED);
    let mut scenes = Vec::with_capacity(opts.scenes);
    for (i, &seed) in seeds.iter().enumerate() {
        let id = scene_id(i);
        let lighting = if label_rng.random_bool(opts.night_fraction) {
            Lighting::Night
        } else {
            Lighting::Day
        };
        let split = if label_rng.random_bool(opts.val_fraction) {
            Split::Val
        } else {
            Split::Train
        };
        let sim = simulate_scene(seed, rig, opts, opts.night_ambient, &id)?;
        let dir = out.join(&id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_png(&dir.join("rgb.png"), &sim.day)?;
        write_png(&dir.join("rgb_dark.png"), &sim.dark)?;
        write_cloud_bin(&dir.join("cloud.bin"), &sim.cloud)?;
        write_calibration(&dir.join("calib.json"), &rig.calibration)?;
        let qa_path = dir.join("qa.json");
        let qa = serde_json::to_string_pretty(&sim.qa).expect("qa serializes");
        fs::write(&qa_path, qa).map_err(|e| Error::io(&qa_path, e))?;
        scenes.push(SceneEntry {
            id,
            seed,
            split,
            lighting,
            ambient: opts.night_ambient,
            day_luminance: mean_luminance(&to_gray(&sim.day))?,
            night_luminance: mean_luminance(&to_gray(&sim.dark))?,
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: opts.seed,
        width: opts.width,
        height: opts.height,
        safety_distance: opts.safety_distance,
        scenes,
    };
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_qa(path: &Path) -> Result<Vec<QaSample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}
