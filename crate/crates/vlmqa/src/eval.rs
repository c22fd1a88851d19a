//! Per-category, per-lighting Top-1 accuracy over a simulated dataset.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use depthvision_core::io::read_png;
use depthvision_core::lama::{fuse, FusionMode, LamaConfig};
use depthvision_core::simgen::{read_qa, Answer, DatasetManifest, Lighting, QaCategory, QaSample, SceneEntry};
use depthvision_core::ImageRgb;
use serde::{Deserialize, Serialize};

use crate::endpoint::{Endpoint, VlmRequest};
use crate::error::{Result, VlmError};
use crate::parse::parse_answer;
use crate::transcript::TranscriptEntry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Camera,
    Full,
    Pixelwise,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Camera => "camera",
            EvalMode::Full => "full",
            EvalMode::Pixelwise => "pixelwise",
        }
    }

    pub fn fusion(self) -> Option<FusionMode> {
        match self {
            EvalMode::Camera => None,
            EvalMode::Full => Some(FusionMode::Full),
            EvalMode::Pixelwise => Some(FusionMode::Pixelwise),
        }
    }
}

impl FromStr for EvalMode {
    type Err = VlmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "camera" => Ok(EvalMode::Camera),
            "full" => Ok(EvalMode::Full),
            "pixelwise" => Ok(EvalMode::Pixelwise),
            _ => Err(VlmError::Config(format!("unknown mode `{s}` (camera, full or pixelwise)"))),
        }
    }
}

/// Prompt per category; `{question}` is replaced by the question text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub exist: String,
    pub count: String,
    pub object: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            exist: "{question} Answer with a single number.".into(),
            count: "{question} Answer with a single number.".into(),
            object: "{question} Answer with one word: car, truck, pedestrian or pole.".into(),
        }
    }
}

impl PromptTemplates {
    pub fn render(&self, sample: &QaSample) -> String {
        let t = match sample.category {
            QaCategory::Exist => &self.exist,
            QaCategory::Count => &self.count,
            QaCategory::Object => &self.object,
        };
        t.replace("{question}", &sample.question)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub mode: EvalMode,
    /// Thresholds for the fusion modes; `daytime_bypass` sends day-labelled
    /// scenes through unfused.
    pub lama: LamaConfig,
    pub model: String,
    pub prompts: PromptTemplates,
    /// Maximum requests in flight.
    pub concurrency: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: EvalMode::Camera,
            lama: LamaConfig {
                daytime_bypass: true,
                ..LamaConfig::default()
            },
            model: "mock".into(),
            prompts: PromptTemplates::default(),
            concurrency: 4,
        }
    }
}

/// Supplies the synthesized image for a scene.
pub trait GanSource: Sync {
    fn gan_image(&self, entry: &SceneEntry, scene_dir: &Path, camera: &ImageRgb) -> Result<ImageRgb>;
}

impl<F> GanSource for F
where
    F: Fn(&SceneEntry, &Path, &ImageRgb) -> Result<ImageRgb> + Sync,
{
    fn gan_image(&self, entry: &SceneEntry, scene_dir: &Path, camera: &ImageRgb) -> Result<ImageRgb> {
        self(entry, scene_dir, camera)
    }
}

pub fn sample_id(scene_id: &str, index: usize) -> String {
    format!("{scene_id}#{index}")
}

/// Image shown to the model for one scene under `mode`.
pub fn eval_image(
    entry: &SceneEntry,
    scene_dir: &Path,
    mode: EvalMode,
    lama: &LamaConfig,
    gan: &dyn GanSource,
) -> Result<ImageRgb> {
    let camera = read_png(&scene_dir.join(entry.camera_file()))?;
    let Some(fusion) = mode.fusion() else {
        return Ok(camera);
    };
    if lama.daytime_bypass && entry.lighting == Lighting::Day {
        return Ok(camera);
    }
    let synth = gan.gan_image(entry, scene_dir, &camera)?;
    let cfg = LamaConfig {
        mode: fusion,
        daytime_bypass: false,
        ..*lama
    };
    Ok(fuse(&camera, &synth, &cfg)?.fused)
}

/// Ground truth keyed by sample id, for the mock endpoints.
pub fn truth_table(dataset: &Path, manifest: &DatasetManifest) -> HashMap<String, Answer> {
    let mut out = HashMap::new();
    for entry in &manifest.scenes {
        if let Ok(qa) = read_qa(&dataset.join(&entry.id).join("qa.json")) {
            for (i, s) in qa.iter().enumerate() {
                out.insert(sample_id(&entry.id, i), s.answer);
            }
        }
    }
    out
}

/// Runs all requests with at most `concurrency` in flight; results keep the
/// request order.
pub fn run_queries(endpoint: &dyn Endpoint, requests: &[VlmRequest], concurrency: usize) -> Vec<Result<String>> {
    let slots: Vec<Mutex<Option<Result<String>>>> = requests.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = concurrency.clamp(1, requests.len().max(1));
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(req) = requests.get(i) else { break };
                let r = endpoint.query(req);
                *slots[i].lock().expect("no poisoning") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("no poisoning").expect("every slot filled"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub scene_id: String,
    pub lighting: Lighting,
    pub category: QaCategory,
    pub question: String,
    pub truth: Answer,
    pub response: Option<String>,
    pub parsed: Option<Answer>,
    pub correct: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub correct: usize,
    pub total: usize,
    /// Percent correct; absent when there are no samples.
    pub accuracy: Option<f64>,
}

impl Cell {
    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += correct as usize;
    }

    fn finish(&mut self) {
        self.accuracy = (self.total > 0).then(|| 100.0 * self.correct as f64 / self.total as f64);
    }
}

/// One row of the report: the three categories and their mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub exist: Cell,
    pub count: Cell,
    pub object: Cell,
    /// Mean of the category accuracies that have samples.
    pub acc: Option<f64>,
}

impl Row {
    pub fn cell(&self, c: QaCategory) -> &Cell {
        match c {
            QaCategory::Exist => &self.exist,
            QaCategory::Count => &self.count,
            QaCategory::Object => &self.object,
        }
    }

    fn cell_mut(&mut self, c: QaCategory) -> &mut Cell {
        match c {
            QaCategory::Exist => &mut self.exist,
            QaCategory::Count => &mut self.count,
            QaCategory::Object => &mut self.object,
        }
    }

    fn finish(&mut self) {
        let mut accs = Vec::new();
        for c in QaCategory::ALL {
            let cell = self.cell_mut(c);
            cell.finish();
            accs.extend(cell.accuracy);
        }
        self.acc = (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedScene {
    pub scene_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub model: String,
    pub day: Row,
    pub night: Row,
    pub all: Row,
    pub samples: usize,
    /// Samples whose query failed or whose answer did not parse.
    pub no_answer: usize,
    pub skipped: Vec<SkippedScene>,
    pub records: Vec<SampleRecord>,
}

impl EvalReport {
    pub fn from_records(mode: EvalMode, model: &str, records: Vec<SampleRecord>, skipped: Vec<SkippedScene>) -> Self {
        let (mut day, mut night, mut all) = (Row::default(), Row::default(), Row::default());
        for r in &records {
            let row = match r.lighting {
                Lighting::Day => &mut day,
                Lighting::Night => &mut night,
            };
            row.cell_mut(r.category).add(r.correct);
            all.cell_mut(r.category).add(r.correct);
        }
        for row in [&mut day, &mut night, &mut all] {
            row.finish();
        }
        Self {
            mode,
            model: model.to_string(),
            day,
            night,
            all,
            samples: records.len(),
            no_answer: records.iter().filter(|r| r.parsed.is_none()).count(),
            skipped,
            records,
        }
    }

    pub fn rows(&self) -> [(&'static str, &Row); 3] {
        [("Day", &self.day), ("Night", &self.night), ("All", &self.all)]
    }

    /// Human-readable table: rows Day/Night/All, columns Exist/Count/Object/Acc.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
        let mut s = String::new();
        writeln!(s, "mode: {}  model: {}  samples: {}  no answer: {}", self.mode.name(), self.model, self.samples, self.no_answer).unwrap();
        writeln!(s, "{:<8}{:>8}{:>8}{:>8}{:>8}", "", "Exist", "Count", "Object", "Acc").unwrap();
        for (name, row) in self.rows() {
            writeln!(
                s,
                "{:<8}{:>8}{:>8}{:>8}{:>8}",
                name,
                fmt(row.exist.accuracy),
                fmt(row.count.accuracy),
                fmt(row.object.accuracy),
                fmt(row.acc)
            )
            .unwrap();
        }
        if !self.skipped.is_empty() {
            writeln!(s, "skipped scenes: {}", self.skipped.len()).unwrap();
        }
        s
    }
}

pub struct Evaluation {
    pub report: EvalReport,
    pub transcript: Vec<TranscriptEntry>,
}

struct Pending {
    scene: usize,
    index: usize,
    sample: QaSample,
}

/// Builds each scene's image, asks every question, and scores the answers.
/// Scenes whose files are missing or unreadable are skipped and listed.
pub fn evaluate(
    dataset: &Path,
    manifest: &DatasetManifest,
    opts: &EvalOptions,
    endpoint: &dyn Endpoint,
    gan: &dyn GanSource,
) -> Result<Evaluation> {
    opts.lama.validate()?;
    let mut skipped = Vec::new();
    let mut pending = Vec::new();
    let mut requests = Vec::new();
    for (si, entry) in manifest.scenes.iter().enumerate() {
        let dir = dataset.join(&entry.id);
        let loaded = read_qa(&dir.join("qa.json"))
            .map_err(VlmError::from)
            .and_then(|qa| Ok((qa, eval_image(entry, &dir, opts.mode, &opts.lama, gan)?)));
        let (qa, image) = match loaded {
            Ok(v) => v,
            Err(e) => {
                log::warn!("skipping {}: {e}", entry.id);
                skipped.push(SkippedScene {
                    scene_id: entry.id.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        for (i, sample) in qa.into_iter().enumerate() {
            let id = sample_id(&entry.id, i);
            requests.push(VlmRequest::new(&id, &opts.model, &opts.prompts.render(&sample), &image));
            pending.push(Pending {
                scene: si,
                index: i,
                sample,
            });
        }
    }
    let outcomes = run_queries(endpoint, &requests, opts.concurrency);
    let mut records = Vec::with_capacity(pending.len());
    let mut transcript = Vec::with_capacity(pending.len());
    for ((p, req), outcome) in pending.into_iter().zip(&requests).zip(outcomes) {
        let entry = &manifest.scenes[p.scene];
        transcript.push(TranscriptEntry::new(req, &outcome));
        let response = outcome.ok();
        let parsed = response.as_deref().and_then(|t| parse_answer(t, p.sample.category));
        records.push(SampleRecord {
            sample_id: sample_id(&entry.id, p.index),
            scene_id: entry.id.clone(),
            lighting: entry.lighting,
            category: p.sample.category,
            question: p.sample.question,
            truth: p.sample.answer,
            correct: parsed == Some(p.sample.answer),
            response,
            parsed,
        });
    }
    Ok(Evaluation {
        report: EvalReport::from_records(opts.mode, &opts.model, records, skipped),
        transcript,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use depthvision_core::simgen::ObjectClass;

    fn rec(lighting: Lighting, category: QaCategory, correct: bool) -> SampleRecord {
        SampleRecord {
            sample_id: String::new(),
            scene_id: String::new(),
            lighting,
            category,
            question: String::new(),
            truth: Answer::Class(ObjectClass::Car),
            response: None,
            parsed: correct.then_some(Answer::Class(ObjectClass::Car)),
            correct,
        }
    }

    #[test]
    fn report_arithmetic() {
        let mut records = Vec::new();
        for (l, c, k, n) in [
            (Lighting::Day, QaCategory::Exist, 3, 4),
            (Lighting::Day, QaCategory::Count, 1, 2),
            (Lighting::Day, QaCategory::Object, 2, 2),
            (Lighting::Night, QaCategory::Exist, 0, 2),
            (Lighting::Night, QaCategory::Count, 1, 4),
            (Lighting::Night, QaCategory::Object, 1, 3),
        ] {
            records.extend((0..n).map(|i| rec(l, c, i < k)));
        }
        let r = EvalReport::from_records(EvalMode::Camera, "m", records, vec![]);
        assert_eq!(r.day.exist.accuracy, Some(75.0));
        assert_eq!(r.all.exist.accuracy, Some(50.0));
        assert_eq!(r.all.count.accuracy, Some(100.0 * 2.0 / 6.0));
        let mean = (75.0 + 50.0 + 100.0) / 3.0;
        assert!((r.day.acc.unwrap() - mean).abs() < 1e-12);
        for c in QaCategory::ALL {
            let (d, n, a) = (r.day.cell(c), r.night.cell(c), r.all.cell(c));
            let (lo, hi) = (d.accuracy.unwrap().min(n.accuracy.unwrap()), d.accuracy.unwrap().max(n.accuracy.unwrap()));
            assert!((lo..=hi).contains(&a.accuracy.unwrap()));
        }
        assert_eq!(r.no_answer, 9);
        let table = r.to_table();
        assert!(table.contains("Exist") && table.contains("75.0"), "{table}");
    }

    #[test]
    fn empty_cells_are_absent() {
        let r = EvalReport::from_records(EvalMode::Full, "m", vec![rec(Lighting::Day, QaCategory::Count, true)], vec![]);
        assert_eq!(r.night.count.accuracy, None);
        assert_eq!(r.night.acc, None);
        assert_eq!(r.day.acc, Some(100.0));
    }

    #[test]
    fn modes_parse() {
        for m in [EvalMode::Camera, EvalMode::Full, EvalMode::Pixelwise] {
            assert_eq!(m.name().parse::<EvalMode>().unwrap(), m);
        }
        assert!("night".parse::<EvalMode>().is_err());
    }
}
