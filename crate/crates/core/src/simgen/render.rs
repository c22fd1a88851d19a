use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scene::{SceneObject, SceneSpec};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::image::ImageRgb;
use crate::lama::{mean_luminance, to_gray};

/// What a ray hit first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Surface {
    Sky,
    Ground,
    Object { index: usize, face: Face },
}

/// Box face by local axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Face {
    Front,
    Side,
    Top,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub surface: Surface,
}

const EPS: f64 = 1e-9;

/// Slab test in the box's local frame; returns entry distance and face.
fn intersect_box(obj: &SceneObject, mount_height: f64, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Face)> {
    let c = obj.centroid(mount_height);
    let h = obj.half_extents();
    let (s, co) = obj.yaw.sin_cos();
    let rel = o - c;
    // rotate by -yaw
    let lo = Vector3::new(co * rel.x + s * rel.y, -s * rel.x + co * rel.y, rel.z);
    let ld = Vector3::new(co * d.x + s * d.y, -s * d.x + co * d.y, d.z);

    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut face = Face::Front;
    for axis in 0..3 {
        let (oa, da, ha) = (lo[axis], ld[axis], h[axis]);
        if da.abs() < 1e-15 {
            if oa.abs() > ha {
                return None;
            }
            continue;
        }
        let t1 = (-ha - oa) / da;
        let t2 = (ha - oa) / da;
        let (ta, tb) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        if ta > t_near {
            t_near = ta;
            face = match axis {
                0 => Face::Front,
                1 => Face::Side,
                _ => Face::Top,
            };
        }
        t_far = t_far.min(tb);
        if t_near > t_far {
            return None;
        }
    }
    (t_near > EPS).then_some((t_near, face))
}

/// Nearest surface along `o + t d` (with `d` of any non-zero length; the
/// returned distance is in units of `|d|`).
pub fn cast_ray(spec: &SceneSpec, o: &Vector3<f64>, d: &Vector3<f64>) -> Hit {
    let h = spec.rig.mount_height;
    let mut best = Hit {
        distance: f64::INFINITY,
        surface: Surface::Sky,
    };
    if d.z < 0.0 {
        let t = (-h - o.z) / d.z;
        let p = o + d * t;
        if t > EPS && p.x.abs() <= spec.ground_extent && p.y.abs() <= spec.ground_extent {
            best = Hit {
                distance: t,
                surface: Surface::Ground,
            };
        }
    }
    for (index, obj) in spec.objects.iter().enumerate() {
        if let Some((t, face)) = intersect_box(obj, h, o, d) {
            if t < best.distance {
                best = Hit {
                    distance: t,
                    surface: Surface::Object { index, face },
                };
            }
        }
    }
    best
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    std::array::from_fn(|i| a[i] * (1.0 - t) + b[i] * t)
}

const SKY_HORIZON: [f64; 3] = [0.80, 0.86, 0.95];
const SKY_ZENITH: [f64; 3] = [0.42, 0.60, 0.90];
const GROUND: [f64; 3] = [0.40, 0.40, 0.38];
const FOG_RANGE: f64 = 150.0;

/// Rendered frame with per-pixel surface labels.
#[derive(Clone, Debug)]
pub struct Rendered {
    pub rgb: ImageRgb,
    pub labels: Vec<Surface>,
}

/// Flat-shaded daylight rendering from the camera of `spec.rig`.
///
/// Visibility is resolved per pixel by casting the pixel-centre ray and
/// keeping the nearest hit.
pub fn render(spec: &SceneSpec) -> Rendered {
    let calib = &spec.rig.calibration;
    let k = &calib.intrinsic;
    let cam_to_lidar = calib.extrinsic.inverse();
    let origin = cam_to_lidar.apply(&Vector3::zeros());
    let rot = cam_to_lidar.rotation();
    let mut labels = Vec::with_capacity(k.width * k.height);
    let img = ImageRgb::from_fn(k.width, k.height, |u, v| {
        let ray_cam = Vector3::new(
            (u as f64 + 0.5 - k.cx) / k.fx,
            (v as f64 + 0.5 - k.cy) / k.fy,
            1.0,
        );
        let d = (rot * ray_cam).normalize();
        let hit = cast_ray(spec, &origin, &d);
        labels.push(hit.surface);
        let fog = (hit.distance / FOG_RANGE).min(1.0);
        match hit.surface {
            Surface::Sky => {
                let t = (d.z.asin() / std::f64::consts::FRAC_PI_4).clamp(0.0, 1.0);
                mix(SKY_HORIZON, SKY_ZENITH, t)
            }
            Surface::Ground => mix(GROUND, SKY_HORIZON, fog),
            Surface::Object { index, face } => {
                let shade = match face {
                    Face::Top => 1.0,
                    Face::Front => 0.8,
                    Face::Side => 0.65,
                };
                let base = spec.objects[index].color.map(|c| c * shade);
                mix(base, SKY_HORIZON, fog)
            }
        }
        .map(|c| c.clamp(0.0, 1.0))
    })
    .expect("rendered colours are in [0, 1]");
    Rendered { rgb: img, labels }
}

pub fn render_rgb(spec: &SceneSpec) -> ImageRgb {
    render(spec).rgb
}

/// LiDAR returns with the surface each return came from.
pub fn render_lidar_labeled(spec: &SceneSpec) -> (PointCloud, Vec<Surface>) {
    let pat = &spec.rig.lidar;
    let origin = Vector3::zeros();
    let mut points = Vec::new();
    let mut intensity = Vec::new();
    let mut labels = Vec::new();
    for ch in 0..pat.channels {
        for step in 0..pat.azimuth_steps {
            let d = pat.direction(ch, step);
            let hit = cast_ray(spec, &origin, &d);
            if !(hit.distance <= pat.max_range) {
                continue;
            }
            points.push(origin + d * hit.distance);
            intensity.push(match hit.surface {
                Surface::Object { index, .. } => spec.objects[index].class.reflectivity(),
                _ => 0.3,
            });
            labels.push(hit.surface);
        }
    }
    let cloud = PointCloud::with_intensity(points, intensity).expect("equal lengths");
    (cloud, labels)
}

pub fn render_lidar(spec: &SceneSpec) -> PointCloud {
    render_lidar_labeled(spec).0
}

/// Scales by the ambient factor `a` and adds seeded Gaussian noise.
pub fn darken(img: &ImageRgb, a: f64, noise_sigma: f64, seed: u64) -> Result<ImageRgb> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::InvalidArgument(format!("ambient factor {a} outside [0, 1]")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sigma {noise_sigma} must be >= 0")));
    }
    let data = if noise_sigma == 0.0 {
        img.data().iter().map(|v| (a * v).clamp(0.0, 1.0)).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sigma).expect("sigma checked");
        img.data()
            .iter()
            .map(|v| (a * v + normal.sample(&mut rng)).clamp(0.0, 1.0))
            .collect()
    };
    ImageRgb::new(img.width(), img.height(), data)
}

pub const TRAINING_LUMINANCE_THRESHOLD: f64 = 0.4;

/// Whether an image has mean luminance of at least `threshold`.
pub fn passes_luminance_filter(img: &ImageRgb, threshold: f64) -> bool {
    mean_luminance(&to_gray(img)).is_ok_and(|l| l >= threshold)
}

/// Keeps images whose mean luminance is at least `threshold`.
pub fn luminance_filter(dataset: &[ImageRgb], threshold: f64) -> Vec<&ImageRgb> {
    dataset
        .iter()
        .filter(|img| passes_luminance_filter(img, threshold))
        .collect()
}
