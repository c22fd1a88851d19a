use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Extrinsic, Intrinsic};
use crate::ingest::Calibration;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Car,
    Truck,
    Pedestrian,
    Pole,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 4] = [
        ObjectClass::Car,
        ObjectClass::Truck,
        ObjectClass::Pedestrian,
        ObjectClass::Pole,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Car => "car",
            ObjectClass::Truck => "truck",
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Pole => "pole",
        }
    }

    pub fn plural(self) -> &'static str {
        match self {
            ObjectClass::Car => "cars",
            ObjectClass::Truck => "trucks",
            ObjectClass::Pedestrian => "pedestrians",
            ObjectClass::Pole => "poles",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    /// Nominal `(length, width, height)` in meters.
    pub fn nominal_size(self) -> [f64; 3] {
        match self {
            ObjectClass::Car => [4.5, 1.9, 1.6],
            ObjectClass::Truck => [8.0, 2.5, 3.2],
            ObjectClass::Pedestrian => [0.6, 0.6, 1.8],
            ObjectClass::Pole => [0.3, 0.3, 4.5],
        }
    }

    pub fn reflectivity(self) -> f64 {
        match self {
            ObjectClass::Car => 0.6,
            ObjectClass::Truck => 0.7,
            ObjectClass::Pedestrian => 0.4,
            ObjectClass::Pole => 0.8,
        }
    }
}

/// Box standing on the ground plane, in the LiDAR frame (x forward, y left, z up).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class: ObjectClass,
    /// Footprint centre `(x, y)`.
    pub center: [f64; 2],
    /// Rotation about +z, radians.
    pub yaw: f64,
    /// `(length, width, height)`.
    pub size: [f64; 3],
    pub color: [f64; 3],
}

impl SceneObject {
    /// Geometric centre, given the sensor height above ground.
    pub fn centroid(&self, mount_height: f64) -> Vector3<f64> {
        Vector3::new(self.center[0], self.center[1], -mount_height + self.size[2] / 2.0)
    }

    pub fn half_extents(&self) -> Vector3<f64> {
        Vector3::new(self.size[0] / 2.0, self.size[1] / 2.0, self.size[2] / 2.0)
    }

    /// The 8 box corners.
    pub fn corners(&self, mount_height: f64) -> [Vector3<f64>; 8] {
        let c = self.centroid(mount_height);
        let h = self.half_extents();
        let (s, co) = self.yaw.sin_cos();
        std::array::from_fn(|i| {
            let lx = if i & 1 == 0 { -h.x } else { h.x };
            let ly = if i & 2 == 0 { -h.y } else { h.y };
            let lz = if i & 4 == 0 { -h.z } else { h.z };
            Vector3::new(c.x + co * lx - s * ly, c.y + s * lx + co * ly, c.z + lz)
        })
    }

    fn footprint_radius(&self) -> f64 {
        (self.size[0].powi(2) + self.size[1].powi(2)).sqrt() / 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarPattern {
    pub channels: usize,
    pub azimuth_steps: usize,
    pub horizontal_fov_deg: f64,
    /// Elevation of the top channel, degrees.
    pub upper_deg: f64,
    /// Elevation of the bottom channel, degrees.
    pub lower_deg: f64,
    pub max_range: f64,
}

impl Default for LidarPattern {
    /// 64 channels over a 74 degree vertical span, 90 degrees horizontal,
    /// 100 m range.
    fn default() -> Self {
        Self {
            channels: 64,
            azimuth_steps: 256,
            horizontal_fov_deg: 90.0,
            upper_deg: 20.0,
            lower_deg: -54.0,
            max_range: 100.0,
        }
    }
}

impl LidarPattern {
    /// Unit ray direction in the LiDAR frame for a channel and azimuth step.
    pub fn direction(&self, channel: usize, step: usize) -> Vector3<f64> {
        let el = if self.channels <= 1 {
            self.upper_deg
        } else {
            self.upper_deg
                - channel as f64 * (self.upper_deg - self.lower_deg) / (self.channels - 1) as f64
        }
        .to_radians();
        let fov = self.horizontal_fov_deg;
        let az = (fov / 2.0 - (step as f64 + 0.5) * fov / self.azimuth_steps as f64).to_radians();
        Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorRig {
    pub calibration: Calibration,
    pub lidar: LidarPattern,
    /// Height of the co-located sensors above the ground, meters.
    pub mount_height: f64,
}

/// Axis change from the LiDAR frame (x fwd, y left, z up) to the camera
/// frame (x right, y down, z fwd).
pub fn lidar_to_camera_axes() -> Matrix3<f64> {
    Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

impl SensorRig {
    /// Front camera with a 90 degree horizontal field of view, co-located with
    /// the LiDAR 1.7 m above ground.
    pub fn desk(width: usize, height: usize) -> Result<Self> {
        Ok(Self {
            calibration: Calibration {
                extrinsic: Extrinsic::new(lidar_to_camera_axes(), Vector3::zeros())?,
                intrinsic: Intrinsic::from_horizontal_fov(90.0, width, height)?,
            },
            lidar: LidarPattern::default(),
            mount_height: 1.7,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    /// Ground plane covers `|x|, |y| <= ground_extent`.
    pub ground_extent: f64,
    pub objects: Vec<SceneObject>,
    /// Ambient light factor in `[0, 1]`; 1 is daylight.
    pub ambient: f64,
    pub rig: SensorRig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneOptions {
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_distance: f64,
    pub max_distance: f64,
    pub ground_extent: f64,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            min_objects: 1,
            max_objects: 6,
            min_distance: 4.0,
            max_distance: 35.0,
            ground_extent: 80.0,
        }
    }
}

fn random_color(rng: &mut ChaCha8Rng, class: ObjectClass) -> [f64; 3] {
    const CAR: [[f64; 3]; 6] = [
        [0.80, 0.12, 0.10],
        [0.10, 0.25, 0.75],
        [0.92, 0.92, 0.90],
        [0.12, 0.12, 0.13],
        [0.55, 0.57, 0.60],
        [0.95, 0.75, 0.10],
    ];
    const TRUCK: [[f64; 3]; 3] = [[0.90, 0.45, 0.08], [0.20, 0.50, 0.25], [0.85, 0.85, 0.82]];
    const PED: [[f64; 3]; 4] = [
        [0.20, 0.60, 0.85],
        [0.85, 0.30, 0.55],
        [0.30, 0.28, 0.25],
        [0.90, 0.85, 0.20],
    ];
    match class {
        ObjectClass::Car => CAR[rng.random_range(0..CAR.len())],
        ObjectClass::Truck => TRUCK[rng.random_range(0..TRUCK.len())],
        ObjectClass::Pedestrian => PED[rng.random_range(0..PED.len())],
        ObjectClass::Pole => [0.50, 0.50, 0.52],
    }
}

impl SceneSpec {
    pub fn empty(seed: u64, rig: SensorRig) -> Self {
        Self {
            seed,
            ground_extent: SceneOptions::default().ground_extent,
            objects: Vec::new(),
            ambient: 1.0,
            rig,
        }
    }

    /// Random street scene; fully determined by `seed`, `rig` and `opts`.
    pub fn random(seed: u64, rig: SensorRig, opts: &SceneOptions) -> Result<Self> {
        if opts.min_objects > opts.max_objects || opts.min_distance >= opts.max_distance {
            return Err(Error::InvalidArgument(format!("invalid scene options {opts:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = rng.random_range(opts.min_objects..=opts.max_objects);
        let half_fov = (rig.lidar.horizontal_fov_deg / 2.0).to_radians();
        let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
        let mut attempts = 0;
        while objects.len() < count && attempts < 200 {
            attempts += 1;
            let class = match rng.random_range(0..100) {
                0..45 => ObjectClass::Car,
                45..60 => ObjectClass::Truck,
                60..85 => ObjectClass::Pedestrian,
                _ => ObjectClass::Pole,
            };
            let nominal = class.nominal_size();
            let scale = rng.random_range(0.9..1.1);
            let size = nominal.map(|s| s * scale);
            let x = rng.random_range(opts.min_distance..opts.max_distance);
            // mostly in view, occasionally just outside
            let lateral = x * (half_fov * 1.15).tan();
            let y = rng.random_range(-lateral..lateral);
            let yaw = match class {
                ObjectClass::Car | ObjectClass::Truck => {
                    let base = if rng.random_bool(0.3) { std::f64::consts::FRAC_PI_2 } else { 0.0 };
                    base + rng.random_range(-0.3..0.3)
                }
                ObjectClass::Pedestrian => rng.random_range(-3.1..3.1),
                ObjectClass::Pole => 0.0,
            };
            let obj = SceneObject {
                class,
                center: [x, y],
                yaw,
                size,
                color: random_color(&mut rng, class),
            };
            let r = obj.footprint_radius();
            if x - r < 2.0 {
                continue;
            }
            let clear = objects.iter().all(|o| {
                let d = ((o.center[0] - x).powi(2) + (o.center[1] - y).powi(2)).sqrt();
                d > o.footprint_radius() + r + 0.3
            });
            if clear {
                objects.push(obj);
            }
        }
        Ok(Self {
            seed,
            ground_extent: opts.ground_extent,
            objects,
            ambient: 1.0,
            rig,
        })
    }
}
