use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::scene::{ObjectClass, SceneObject, SceneSpec};

pub const DEFAULT_SAFETY_DISTANCE: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QaCategory {
    Exist,
    Count,
    Object,
}

impl QaCategory {
    pub const ALL: [QaCategory; 3] = [QaCategory::Exist, QaCategory::Count, QaCategory::Object];

    pub fn name(self) -> &'static str {
        match self {
            QaCategory::Exist => "exist",
            QaCategory::Count => "count",
            QaCategory::Object => "object",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Number(u32),
    Class(ObjectClass),
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Number(n) => write!(f, "{n}"),
            Answer::Class(c) => f.write_str(c.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaSample {
    pub scene_id: String,
    pub question: String,
    pub category: QaCategory,
    pub answer: Answer,
}

/// Distance from the sensor origin to the closest point of the box.
pub fn closest_distance(obj: &SceneObject, mount_height: f64) -> f64 {
    let c = obj.centroid(mount_height);
    let h = obj.half_extents();
    let (s, co) = obj.yaw.sin_cos();
    let rel = -c;
    let local = Vector3::new(co * rel.x + s * rel.y, -s * rel.x + co * rel.y, rel.z);
    let clamped = Vector3::new(
        local.x.clamp(-h.x, h.x),
        local.y.clamp(-h.y, h.y),
        local.z.clamp(-h.z, h.z),
    );
    (local - clamped).norm()
}

/// Camera-frame centroid if the centroid projects inside the image.
fn in_frustum(spec: &SceneSpec, obj: &SceneObject) -> Option<Vector3<f64>> {
    let calib = &spec.rig.calibration;
    let k = &calib.intrinsic;
    let p = calib.extrinsic.apply(&obj.centroid(spec.rig.mount_height));
    if p.z <= 0.0 {
        return None;
    }
    let u = k.fx * p.x / p.z + k.cx;
    let v = k.fy * p.y / p.z + k.cy;
    ((0.0..k.width as f64).contains(&u) && (0.0..k.height as f64).contains(&v)).then_some(p)
}

/// Indices of objects whose centroid is inside the camera frustum.
pub fn visible_objects(spec: &SceneSpec) -> Vec<usize> {
    (0..spec.objects.len())
        .filter(|&i| in_frustum(spec, &spec.objects[i]).is_some())
        .collect()
}

pub fn exist_question(safety_distance: f64) -> String {
    format!(
        "How many safety-critical objects are within {safety_distance} meters of the ego vehicle?"
    )
}

pub fn count_question(class: ObjectClass) -> String {
    format!("How many {} are there in the image?", class.plural())
}

pub fn object_question() -> String {
    "What kind of object is closest to the center of the image?".to_string()
}

/// Ground-truth questions derived from the scene geometry: one existence
/// question, one count per class, and one classification question when any
/// object is in view.
pub fn make_qa(spec: &SceneSpec, scene_id: &str, safety_distance: f64) -> Vec<QaSample> {
    let h = spec.rig.mount_height;
    let visible = visible_objects(spec);
    let sample = |category, question: String, answer| QaSample {
        scene_id: scene_id.to_string(),
        question,
        category,
        answer,
    };

    let critical = visible
        .iter()
        .filter(|&&i| closest_distance(&spec.objects[i], h) < safety_distance)
        .count();
    let mut out = vec![sample(
        QaCategory::Exist,
        exist_question(safety_distance),
        Answer::Number(critical as u32),
    )];

    for class in ObjectClass::ALL {
        let n = visible.iter().filter(|&&i| spec.objects[i].class == class).count();
        out.push(sample(QaCategory::Count, count_question(class), Answer::Number(n as u32)));
    }

    // smallest angle between the centroid direction and the optical axis
    let nearest_center = visible
        .iter()
        .map(|&i| {
            let p = in_frustum(spec, &spec.objects[i]).expect("visible");
            ((p.x * p.x + p.y * p.y).sqrt().atan2(p.z), i)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if let Some((_, i)) = nearest_center {
        out.push(sample(
            QaCategory::Object,
            object_question(),
            Answer::Class(spec.objects[i].class),
        ));
    }
    out
}
