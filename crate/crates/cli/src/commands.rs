//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::Duration;

use depthvision_core::densify::densify_nearest;
use depthvision_core::geometry::{cloud_to_depth, crop_center};
use depthvision_core::ingest::{read_calibration, read_cloud_bin};
use depthvision_core::io::{read_png, RawGrid};
use depthvision_core::lama::{fuse, mean_luminance, to_gray, FusionMode};
use depthvision_core::simgen::{generate_dataset, DatasetManifest, SceneEntry, Split, MANIFEST_FILE};
use depthvision_core::{Calibration, DepthMap, ImageRgb};
use depthvision_neural::{
    load_weights, mean_l1, mean_logits, pair_from_cloud, save_weights, synthesize, LossRecord, Model, Trainer,
    TrainingPair,
};
use depthvision_vlmqa::{
    evaluate, truth_table, write_transcript, EndpointSpec, EvalMode, EvalOptions, GanSource, VlmError,
};
use serde_json::json;

use crate::config::PipelineConfig;
use crate::error::{CliError, ErrorKind, Result};
use crate::report::{event, set_json_logs, Outputs};
use crate::{
    Cli, Command, DensifyArgs, EvaluateArgs, FuseArgs, PipelineArgs, ProjectArgs, SimulateArgs, SynthArgs, TrainArgs,
};

/// Floats per record in `cloud.bin`: x, y, z, intensity.
pub const CLOUD_STRIDE: usize = 4;

/// Runs one parsed command line; `args` is the raw argument list recorded in
/// `run.json`.
pub fn run(cli: Cli, args: &[String]) -> Result<()> {
    set_json_logs(cli.json_logs);
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a, config, args),
        Command::Project(a) => project(a, config, args),
        Command::Densify(a) => densify(a, config, args),
        Command::Train(a) => train(a, config, args),
        Command::Synth(a) => synth(a, config, args),
        Command::Fuse(a) => fuse_cmd(a, config, args),
        Command::Evaluate(a) => evaluate_cmd(a, config, args),
        Command::Pipeline(a) => pipeline(a, config, args),
    }
}

fn fusion_mode(s: &str) -> Result<FusionMode> {
    match s {
        "full" => Ok(FusionMode::Full),
        "pixelwise" => Ok(FusionMode::Pixelwise),
        _ => Err(CliError::config(format!("unknown fusion mode `{s}` (full or pixelwise)"))),
    }
}

/// Accepts a dataset directory or the path of its manifest file.
fn dataset_dir(path: &Path) -> PathBuf {
    if path.file_name().is_some_and(|n| n == MANIFEST_FILE) || path.is_file() {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        path.to_path_buf()
    }
}

fn calibration(path: &Path) -> Result<Calibration> {
    let (extrinsic, intrinsic) = read_calibration(path)?;
    Ok(Calibration { extrinsic, intrinsic })
}

/// Projects a cloud into the camera, optionally cropping a centred square.
pub fn project_cloud(cloud_path: &Path, calib: &Calibration, crop: Option<usize>) -> Result<DepthMap> {
    let cloud = read_cloud_bin(cloud_path, CLOUD_STRIDE)?;
    let depth = cloud_to_depth(&cloud, &calib.extrinsic, &calib.intrinsic);
    Ok(match crop {
        Some(size) => crop_center(&depth, &calib.intrinsic, size)?,
        None => depth,
    })
}

fn read_depth(path: &Path) -> Result<DepthMap> {
    Ok(RawGrid::read(path)?.into_depth()?)
}

fn read_gan(path: &Path) -> Result<ImageRgb> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        Ok(read_png(path)?)
    } else {
        Ok(RawGrid::read(path)?.into_rgb()?)
    }
}

/// Brings the camera image to the synthesized image's size, cropping the
/// centred square when a calibration is available.
fn match_camera(rgb: ImageRgb, gan: &ImageRgb, calib: Option<&Calibration>) -> Result<ImageRgb> {
    if rgb.dims() == gan.dims() {
        return Ok(rgb);
    }
    match calib {
        Some(c) if gan.width() == gan.height() => Ok(crop_center(&rgb, &c.intrinsic, gan.width())?),
        _ => Err(CliError::config(format!(
            "camera image is {}x{} but the synthesized image is {}x{}; pass --calib to crop",
            rgb.width(),
            rgb.height(),
            gan.width(),
            gan.height()
        ))),
    }
}

fn write_fusion(out: &mut Outputs, rgb: &ImageRgb, gan: &ImageRgb, config: &PipelineConfig) -> Result<()> {
    let mut lama = config.lama_config();
    // the luminance bypass only matters for evaluation, where it is applied
    // by lighting label; a direct fusion always applies the blend
    lama.daytime_bypass = false;
    let result = fuse(rgb, gan, &lama)?;
    out.png("fused.png", &result.fused)?;
    out.grid("fused.dvim", &RawGrid::from(&result.fused))?;
    let summary = json!({
        "mode": result.mode,
        "mean_luminance": mean_luminance(&to_gray(rgb))?,
        "l_low": lama.l_low,
        "l_high": lama.l_high,
        "alpha": result.alpha,
    });
    out.json("alpha.json", &summary)?;
    event("fused", summary);
    Ok(())
}

fn write_synth(out: &mut Outputs, gan: &ImageRgb) -> Result<()> {
    out.png("synth.png", gan)?;
    out.grid("synth.dvim", &RawGrid::from(gan))
}

fn simulate(a: SimulateArgs, mut config: PipelineConfig, args: &[String]) -> Result<()> {
    let s = &mut config.simulate;
    s.scenes = a.scenes.unwrap_or(s.scenes);
    s.width = a.width.unwrap_or(s.width);
    s.height = a.height.unwrap_or(s.height);
    s.night_fraction = a.night_fraction.unwrap_or(s.night_fraction);
    s.night_ambient = a.night_ambient.unwrap_or(s.night_ambient);
    config.validate()?;
    let mut out = Outputs::create(&a.out)?;
    let manifest = generate_dataset(&a.out, &config.dataset_options())?;
    out.record(MANIFEST_FILE)?;
    for s in &manifest.scenes {
        for f in ["rgb.png", "rgb_dark.png", "cloud.bin", "calib.json", "qa.json"] {
            out.record(&format!("{}/{f}", s.id))?;
        }
    }
    let night = manifest.scenes.iter().filter(|s| s.camera_file() == "rgb_dark.png").count();
    event("simulated", json!({ "scenes": manifest.scenes.len(), "night": night }));
    out.finish("simulate", args, &config)
}

fn project(a: ProjectArgs, mut config: PipelineConfig, args: &[String]) -> Result<()> {
    if a.crop.is_some() {
        config.crop_size = a.crop;
    }
    config.validate()?;
    let calib = calibration(&a.calib)?;
    let depth = project_cloud(&a.cloud, &calib, config.crop_size)?;
    let mut out = Outputs::create(&a.out)?;
    out.grid("depth.dvim", &RawGrid::from(&depth))?;
    event(
        "projected",
        json!({ "width": depth.width(), "height": depth.height(), "valid": depth.valid_count() }),
    );
    out.finish("project", args, &config)
}

fn densify(a: DensifyArgs, config: PipelineConfig, args: &[String]) -> Result<()> {
    config.validate()?;
    let sparse = read_depth(&a.depth)?;
    let dense = densify_nearest(&sparse)?;
    let mut out = Outputs::create(&a.out)?;
    let grid = RawGrid {
        width: dense.width(),
        height: dense.height(),
        channels: 1,
        data: dense.depth().to_vec(),
    };
    out.grid("dense.dvim", &grid)?;
    out.finish("densify", args, &config)
}

/// Training and held-out pairs of a dataset. Training keeps day images of
/// train-split scenes whose mean luminance reaches `min_luminance`; the
/// validation split supplies held-out pairs.
pub struct DatasetPairs {
    pub train: Vec<TrainingPair>,
    pub val: Vec<TrainingPair>,
    pub filtered: usize,
}

pub fn dataset_pairs(dir: &Path, manifest: &DatasetManifest, config: &PipelineConfig) -> Result<DatasetPairs> {
    let arch = config.generator.arch();
    let mut pairs = DatasetPairs {
        train: Vec::new(),
        val: Vec::new(),
        filtered: 0,
    };
    for s in &manifest.scenes {
        let scene = dir.join(&s.id);
        let rgb = read_png(&scene.join("rgb.png"))?;
        if s.split == Split::Train && mean_luminance(&to_gray(&rgb))? < config.train.min_luminance {
            pairs.filtered += 1;
            continue;
        }
        let calib = calibration(&scene.join("calib.json"))?;
        let cloud = read_cloud_bin(&scene.join("cloud.bin"), CLOUD_STRIDE)?;
        let pair = pair_from_cloud(&cloud, &rgb, &calib, &arch)?;
        match s.split {
            Split::Train => pairs.train.push(pair),
            Split::Val => pairs.val.push(pair),
        }
    }
    Ok(pairs)
}

fn train(a: TrainArgs, mut config: PipelineConfig, args: &[String]) -> Result<()> {
    config.train.steps = a.steps.unwrap_or(config.train.steps);
    config.train.batch_size = a.batch_size.unwrap_or(config.train.batch_size);
    if let Some(r) = a.resolution {
        config.generator.resolution = r;
    }
    config.validate()?;
    let dir = dataset_dir(&a.dataset);
    let manifest = DatasetManifest::read(&dir)?;
    let pairs = dataset_pairs(&dir, &manifest, &config)?;
    if pairs.train.is_empty() {
        return Err(CliError::config("no training scenes pass the luminance filter"));
    }
    event(
        "dataset",
        json!({ "train": pairs.train.len(), "val": pairs.val.len(), "filtered": pairs.filtered }),
    );
    let model = Model::new(config.generator.arch(), config.seed)?;
    let initial_val = if pairs.val.is_empty() {
        None
    } else {
        Some(mean_l1(&model, &pairs.val, true)?)
    };
    let mut trainer = Trainer::new(model, config.train_config())?;
    let mut out = Outputs::create(&a.out)?;
    let mut history: Vec<LossRecord> = Vec::new();
    let steps = config.train.steps;
    let fitted = trainer.fit(&pairs.train, |r| {
        history.push(r.clone());
        if (r.step + 1) % 100 == 0 || r.step + 1 == steps {
            event(
                "train_step",
                json!({ "step": r.step + 1, "d_loss": r.d_loss, "g_adv": r.g_adv, "g_l1": r.g_l1 }),
            );
        }
    });
    let lines: String = history
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect();
    out.bytes("losses.jsonl", lines.as_bytes())?;
    if let Err(e) = fitted {
        let err = CliError::from(e);
        if err.kind == ErrorKind::Divergence {
            out.finish("train", args, &config)?;
        }
        return Err(err);
    }
    let model = &trainer.model;
    save_weights(&out.path("weights.dvnn"), model, trainer.step())?;
    out.record("weights.dvnn")?;
    let mut metrics = json!({
        "steps": trainer.step(),
        "train_pairs": pairs.train.len(),
        "val_pairs": pairs.val.len(),
        "filtered": pairs.filtered,
        "final": history.last(),
    });
    if let Some(initial) = initial_val {
        let (real, fake) = mean_logits(model, &pairs.val)?;
        metrics["val"] = json!({
            "l1_initial": initial,
            "l1_final": mean_l1(model, &pairs.val, true)?,
            "l1_unrefined": mean_l1(model, &pairs.val, false)?,
            "real_logit": real,
            "fake_logit": fake,
        });
    }
    event("trained", metrics.clone());
    out.json("metrics.json", &metrics)?;
    out.finish("train", args, &config)
}

fn load_model(path: &Path, config: &mut PipelineConfig) -> Result<Model> {
    let (model, _) = load_weights(path, None)?;
    // the weight file's architecture governs synthesis
    config.generator = (&model.arch).into();
    Ok(model)
}

fn synth(a: SynthArgs, mut config: PipelineConfig, args: &[String]) -> Result<()> {
    let model = load_model(&a.weights, &mut config)?;
    config.validate()?;
    let sparse = read_depth(&a.depth)?;
    let gan = synthesize(&model, &sparse)?;
    let mut out = Outputs::create(&a.out)?;
    write_synth(&mut out, &gan)?;
    out.finish("synth", args, &config)
}

fn fuse_cmd(a: FuseArgs, mut config: PipelineConfig, args: &[String]) -> Result<()> {
    if let Some(m) = &a.mode {
        config.lama.mode = fusion_mode(m)?;
    }
    config.validate()?;
    let gan = read_gan(&a.gan)?;
    let calib = a.calib.as_deref().map(calibration).transpose()?;
    let rgb = match_camera(read_png(&a.rgb)?, &gan, calib.as_ref())?;
    let mut out = Outputs::create(&a.out)?;
    write_fusion(&mut out, &rgb, &gan, &config)?;
    out.finish("fuse", args, &config)
}

fn pipeline(a: PipelineArgs, mut config: PipelineConfig, args: &[String]) -> Result<()> {
    if let Some(m) = &a.mode {
        config.lama.mode = fusion_mode(m)?;
    }
    if a.crop.is_some() {
        config.crop_size = a.crop;
    }
    let model = load_model(&a.weights, &mut config)?;
    config.validate()?;
    let calib = calibration(&a.scene.join("calib.json"))?;
    let depth = project_cloud(&a.scene.join("cloud.bin"), &calib, config.crop_size)?;
    let mut out = Outputs::create(&a.out)?;
    let depth_grid = RawGrid::from(&depth);
    out.grid("depth.dvim", &depth_grid)?;
    // synthesize from the stored form, exactly as the staged commands do
    let gan = synthesize(&model, &depth_grid.into_depth()?)?;
    write_synth(&mut out, &gan)?;
    let rgb_path = a.rgb.unwrap_or_else(|| a.scene.join("rgb.png"));
    let rgb = match_camera(read_png(&rgb_path)?, &gan, Some(&calib))?;
    write_fusion(&mut out, &rgb, &gan, &config)?;
    out.finish("pipeline", args, &config)
}

/// Synthesizes each scene's image from its point cloud with a trained model.
pub struct ModelGan {
    pub model: Model,
}

impl GanSource for ModelGan {
    fn gan_image(&self, _: &SceneEntry, dir: &Path, _: &ImageRgb) -> depthvision_vlmqa::Result<ImageRgb> {
        let neural = |e: depthvision_neural::NeuralError| VlmError::Format {
            path: dir.to_path_buf(),
            message: e.to_string(),
        };
        let (extrinsic, intrinsic) = read_calibration(&dir.join("calib.json"))?;
        let cloud = read_cloud_bin(&dir.join("cloud.bin"), CLOUD_STRIDE)?;
        let sparse = cloud_to_depth(&cloud, &extrinsic, &intrinsic);
        synthesize(&self.model, &sparse).map_err(neural)
    }
}

/// Fusion modes without weights: any request for a synthesized image fails.
struct NoGan;

impl GanSource for NoGan {
    fn gan_image(&self, _: &SceneEntry, dir: &Path, _: &ImageRgb) -> depthvision_vlmqa::Result<ImageRgb> {
        Err(VlmError::Config(format!("{}: no weights for synthesis", dir.display())))
    }
}

fn evaluate_cmd(a: EvaluateArgs, mut config: PipelineConfig, args: &[String]) -> Result<()> {
    if let Some(m) = &a.mode {
        config.eval.mode = m.parse::<EvalMode>()?;
    }
    if let Some(e) = &a.endpoint {
        config.eval.endpoint = e.clone();
    }
    config.eval.concurrency = a.concurrency.unwrap_or(config.eval.concurrency);
    let gan: Box<dyn GanSource> = match (&a.weights, config.eval.mode) {
        (Some(w), _) => Box::new(ModelGan {
            model: load_model(w, &mut config)?,
        }),
        (None, EvalMode::Camera) => Box::new(NoGan),
        (None, mode) => {
            return Err(CliError::config(format!("mode `{}` needs --weights", mode.name())));
        }
    };
    config.validate()?;
    let dir = dataset_dir(&a.manifest);
    let manifest = DatasetManifest::read(&dir)?;
    let spec = EndpointSpec::parse(&config.eval.endpoint)?;
    let endpoint = spec.build(
        truth_table(&dir, &manifest),
        Duration::from_secs(config.eval.timeout_secs),
    )?;
    let opts = EvalOptions {
        mode: config.eval.mode,
        lama: config.lama_config(),
        model: config.eval.model.clone(),
        prompts: config.eval.prompts.clone(),
        concurrency: config.eval.concurrency,
    };
    let ev = evaluate(&dir, &manifest, &opts, endpoint.as_ref(), gan.as_ref())?;
    let mut out = Outputs::create(&a.out)?;
    out.json("report.json", &ev.report)?;
    let table = ev.report.to_table();
    out.bytes("report.txt", table.as_bytes())?;
    write_transcript(&out.path("transcript.jsonl"), &ev.transcript)?;
    out.record("transcript.jsonl")?;
    out.finish("evaluate", args, &config)?;
    print!("{table}");
    event(
        "evaluated",
        json!({
            "mode": ev.report.mode,
            "samples": ev.report.samples,
            "no_answer": ev.report.no_answer,
            "skipped": ev.report.skipped.len(),
            "acc": ev.report.all.acc,
        }),
    );
    let failed = ev.transcript.iter().filter(|t| t.error.is_some()).count();
    if !ev.transcript.is_empty() && failed == ev.transcript.len() {
        return Err(CliError::new(
            ErrorKind::Endpoint,
            format!("all {failed} queries to `{}` failed", config.eval.endpoint),
        ));
    }
    Ok(())
}
