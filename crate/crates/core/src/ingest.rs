//! Readers for point-cloud sweeps, calibration and odometry poses.
//!
//! * `cloud.bin`: packed little-endian `f32` records of 3, 4 or 5 floats
//!   (`x, y, z[, intensity[, ring]]`).
//! * `calib.json`: `{rotation[9], translation[3], fx, fy, cx, cy, width, height}`
//!   with the rotation row-major, mapping LiDAR to camera coordinates.
//! * `poses.json`: `[{timestamp_us, rotation[9], translation[3]}]`, world from
//!   sensor.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Extrinsic, Intrinsic, PointCloud};

pub const CALIBRATION_TOLERANCE: f64 = 1e-6;
pub const MAX_SWEEPS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// LiDAR-to-camera extrinsics plus camera intrinsics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub extrinsic: Extrinsic,
    pub intrinsic: Intrinsic,
}

impl CalibrationFile {
    pub fn validate(&self) -> Result<Calibration> {
        let extrinsic = extrinsic_from_parts(&self.rotation, &self.translation)?;
        let intrinsic = Intrinsic::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?;
        Ok(Calibration {
            extrinsic,
            intrinsic,
        })
    }
}

impl From<&Calibration> for CalibrationFile {
    fn from(c: &Calibration) -> Self {
        let r = c.extrinsic.rotation();
        let t = c.extrinsic.translation();
        let k = &c.intrinsic;
        Self {
            rotation: std::array::from_fn(|i| r[(i / 3, i % 3)]),
            translation: [t.x, t.y, t.z],
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        }
    }
}

fn extrinsic_from_parts(rotation: &[f64; 9], translation: &[f64; 3]) -> Result<Extrinsic> {
    Extrinsic::with_tolerance(
        Matrix3::from_row_slice(rotation),
        Vector3::from(*translation),
        CALIBRATION_TOLERANCE,
    )
}

pub fn read_calibration(path: &Path) -> Result<(Extrinsic, Intrinsic)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CalibrationFile =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    let calib = file.validate()?;
    Ok((calib.extrinsic, calib.intrinsic))
}

pub fn write_calibration(path: &Path, calib: &Calibration) -> Result<()> {
    let text = serde_json::to_string_pretty(&CalibrationFile::from(calib))
        .expect("calibration serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Decodes packed `f32` records. Returns the cloud and the number of records
/// skipped for non-finite coordinates.
pub fn decode_cloud(bytes: &[u8], stride: usize) -> std::result::Result<(PointCloud, usize), Error> {
    if !(3..=5).contains(&stride) {
        return Err(Error::InvalidArgument(format!(
            "stride must be 3, 4 or 5 floats, got {stride}"
        )));
    }
    let record = 4 * stride;
    if bytes.len() % record != 0 {
        return Err(Error::CloudSize {
            bytes: bytes.len() as u64,
            record,
        });
    }
    let n = bytes.len() / record;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(if stride >= 4 { n } else { 0 });
    let mut skipped = 0;
    for rec in bytes.chunks_exact(record) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap()) as f64;
        let p = Vector3::new(f(0), f(1), f(2));
        if !p.iter().all(|c| c.is_finite()) {
            skipped += 1;
            continue;
        }
        points.push(p);
        if stride >= 4 {
            intensity.push(f(3));
        }
    }
    let cloud = if stride >= 4 {
        PointCloud::with_intensity(points, intensity)?
    } else {
        PointCloud::new(points)
    };
    Ok((cloud, skipped))
}

pub fn read_cloud_bin(path: &Path, stride: usize) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (cloud, skipped) = decode_cloud(&bytes, stride)?;
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} non-finite records", path.display());
    }
    Ok(cloud)
}

/// Encodes `x, y, z, intensity` records (intensity 0 when absent).
pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for (i, p) in cloud.points.iter().enumerate() {
        let inten = cloud.intensity.as_ref().map_or(0.0, |v| v[i]);
        for v in [p.x, p.y, p.z, inten] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_cloud_bin(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, encode_cloud(cloud)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub timestamp_us: u64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

pub fn read_poses(path: &Path) -> Result<Vec<(u64, Extrinsic)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<PoseRecord> =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    records
        .iter()
        .map(|r| Ok((r.timestamp_us, extrinsic_from_parts(&r.rotation, &r.translation)?)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub cloud: PointCloud,
    /// World from sensor.
    pub pose: Extrinsic,
    pub timestamp_us: u64,
}

/// Merges the reference sweep with up to `n - 1` preceding sweeps, expressed
/// in the reference sweep's sensor frame. Compensation is per sweep.
pub fn accumulate_sweeps(sweeps: &[SweepRecord], n: usize, reference: usize) -> Result<PointCloud> {
    if n < 1 || n > MAX_SWEEPS {
        return Err(Error::InvalidArgument(format!(
            "sweep count must be in 1..={MAX_SWEEPS}, got {n}"
        )));
    }
    if reference >= sweeps.len() {
        return Err(Error::InvalidArgument(format!(
            "reference index {reference} out of {} sweeps",
            sweeps.len()
        )));
    }
    if n > reference + 1 {
        return Err(Error::InvalidArgument(format!(
            "{n} sweeps requested but only {} available up to the reference",
            reference + 1
        )));
    }
    let ref_from_world = sweeps[reference].pose.inverse();
    let mut out = sweeps[reference].cloud.clone();
    for sweep in sweeps[reference + 1 - n..reference].iter().rev() {
        let ref_from_sweep = ref_from_world.compose(&sweep.pose);
        out.extend(PointCloud {
            points: sweep.cloud.points.iter().map(|p| ref_from_sweep.apply(p)).collect(),
            intensity: sweep.cloud.intensity.clone(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn floats_to_bytes(v: &[f32]) -> Vec<u8> {
        v.iter().flat_map(|f| f.to_le_bytes()).collect()
    }

    #[test]
    fn decode_examples() {
        let (c, _) = decode_cloud(&floats_to_bytes(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), 3).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.intensity.is_none());

        let (c, _) = decode_cloud(&floats_to_bytes(&[1.0, 2.0, 3.0, 0.5]), 4).unwrap();
        assert_eq!(c.points, vec![Vector3::new(1.0, 2.0, 3.0)]);
        assert_eq!(c.intensity, Some(vec![0.5]));

        let (c, _) = decode_cloud(&floats_to_bytes(&[1.0, 2.0, 3.0, 0.5, 31.0]), 5).unwrap();
        assert_eq!(c.intensity, Some(vec![0.5]));

        assert!(matches!(
            decode_cloud(&[0u8; 25], 3),
            Err(Error::CloudSize { bytes: 25, .. })
        ));
        assert!(decode_cloud(&[0u8; 24], 6).is_err());
    }

    #[test]
    fn non_finite_records_are_skipped() {
        let bytes = floats_to_bytes(&[1.0, f32::NAN, 3.0, 4.0, 5.0, 6.0, f32::INFINITY, 0.0, 0.0]);
        let (c, skipped) = decode_cloud(&bytes, 3).unwrap();
        assert_eq!(skipped, 2);
        assert_eq!(c.points, vec![Vector3::new(4.0, 5.0, 6.0)]);
    }

    #[test]
    fn calibration_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calib.json");
        let write = |rot: [f64; 9], fx: f64| {
            let f = CalibrationFile {
                rotation: rot,
                translation: [0.0, 0.0, 0.0],
                fx,
                fy: 100.0,
                cx: 32.0,
                cy: 32.0,
                width: 64,
                height: 64,
            };
            fs::write(&path, serde_json::to_string(&f).unwrap()).unwrap();
        };
        let ident = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        write(ident, 100.0);
        let (ext, intr) = read_calibration(&path).unwrap();
        assert_eq!(ext, Extrinsic::identity());
        assert_eq!(intr.width, 64);

        write([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0], 100.0);
        let err = read_calibration(&path).unwrap_err();
        assert!(err.to_string().contains("improper rotation"), "{err}");

        write(ident, 0.0);
        assert!(matches!(read_calibration(&path), Err(Error::InvalidIntrinsic(_))));

        fs::write(&path, r#"{"rotation":[1,0,0,0,1,0,0,0,1],"translation":[0,0,0]}"#).unwrap();
        let err = read_calibration(&path).unwrap_err();
        assert!(err.to_string().contains("missing field"), "{err}");
    }

    #[test]
    fn calibration_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calib.json");
        let calib = Calibration {
            extrinsic: Extrinsic::new(
                Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0),
                Vector3::new(0.1, -0.2, 0.3),
            )
            .unwrap(),
            intrinsic: Intrinsic::new(64.0, 64.0, 32.0, 32.0, 64, 64).unwrap(),
        };
        write_calibration(&path, &calib).unwrap();
        let (ext, intr) = read_calibration(&path).unwrap();
        assert_eq!(ext, calib.extrinsic);
        assert_eq!(intr, calib.intrinsic);
    }

    #[test]
    fn poses_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.json");
        fs::write(
            &path,
            r#"[{"timestamp_us": 10, "rotation": [1,0,0,0,1,0,0,0,1], "translation": [1,2,3]}]"#,
        )
        .unwrap();
        let poses = read_poses(&path).unwrap();
        assert_eq!(poses[0].0, 10);
        assert_eq!(*poses[0].1.translation(), Vector3::new(1.0, 2.0, 3.0));
    }

    fn sweep(points: Vec<Vector3<f64>>, t: [f64; 3]) -> SweepRecord {
        SweepRecord {
            cloud: PointCloud::new(points),
            pose: Extrinsic::new(Matrix3::identity(), Vector3::from(t)).unwrap(),
            timestamp_us: 0,
        }
    }

    #[test]
    fn accumulation_examples() {
        let a = sweep(vec![Vector3::new(1.0, 1.0, 1.0)], [0.0; 3]);
        let b = sweep(vec![Vector3::zeros()], [0.0; 3]);
        let sweeps = vec![b.clone(), a.clone()];
        assert_eq!(accumulate_sweeps(&sweeps, 1, 1).unwrap(), a.cloud);

        let both = accumulate_sweeps(&sweeps, 2, 1).unwrap();
        assert_eq!(both.points, vec![Vector3::new(1.0, 1.0, 1.0), Vector3::zeros()]);

        // B sits 1 m further along world x than A (the reference)
        let b = sweep(vec![Vector3::zeros()], [1.0, 0.0, 0.0]);
        let out = accumulate_sweeps(&[b, a], 2, 1).unwrap();
        assert_eq!(out.points[1], Vector3::new(1.0, 0.0, 0.0));

        assert!(accumulate_sweeps(&sweeps, 0, 1).is_err());
        assert!(accumulate_sweeps(&sweeps, 3, 1).is_err());
        assert!(accumulate_sweeps(&sweeps, 4, 1).is_err());
    }

    fn arb_pose() -> impl Strategy<Value = Extrinsic> {
        (
            prop::array::uniform3(-3.1f64..3.1),
            prop::array::uniform3(-20.0f64..20.0),
        )
            .prop_map(|(e, t)| {
                let r = nalgebra::Rotation3::from_euler_angles(e[0], e[1], e[2]);
                Extrinsic::new(*r.matrix(), Vector3::from(t)).unwrap()
            })
    }

    proptest! {
        #[test]
        fn cloud_bytes_round_trip(pts in prop::collection::vec(prop::array::uniform4(-1e4f32..1e4), 0..50)) {
            let bytes: Vec<u8> = pts.iter().flatten().flat_map(|f| f.to_le_bytes()).collect();
            let (cloud, skipped) = decode_cloud(&bytes, 4).unwrap();
            prop_assert_eq!(skipped, 0);
            prop_assert_eq!(encode_cloud(&cloud), bytes);
        }

        #[test]
        fn world_route_equals_relative_transform(
            a in arb_pose(), b in arb_pose(), p in prop::array::uniform3(-50.0f64..50.0)
        ) {
            let p = Vector3::from(p);
            let via_world = a.inverse().apply(&b.apply(&p));
            let direct = a.inverse().compose(&b).apply(&p);
            prop_assert!((via_world - direct).amax() <= 1e-9);
        }

        #[test]
        fn identity_odometry_is_concatenation(
            a in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 0..10),
            b in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 0..10),
        ) {
            let pa: Vec<_> = a.into_iter().map(Vector3::from).collect();
            let pb: Vec<_> = b.into_iter().map(Vector3::from).collect();
            let sweeps = vec![sweep(pb.clone(), [0.0; 3]), sweep(pa.clone(), [0.0; 3])];
            let out = accumulate_sweeps(&sweeps, 2, 1).unwrap();
            let expected: Vec<_> = pa.into_iter().chain(pb).collect();
            prop_assert_eq!(out.points, expected);
        }
    }
}
