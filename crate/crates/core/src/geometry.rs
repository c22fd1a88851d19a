//! LiDAR-to-camera projection.
//!
//! Points are moved into the camera frame with a rigid transform, projected
//! through a pinhole model, filtered to the image frustum and rasterized into
//! a sparse depth map with a nearest-surface rule.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DepthMap, ImageRgb, Window};

/// Default tolerance for rotation orthonormality checks.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            intensity: None,
        }
    }

    pub fn with_intensity(points: Vec<Vector3<f64>>, intensity: Vec<f64>) -> Result<Self> {
        if points.len() != intensity.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} intensities",
                points.len(),
                intensity.len()
            )));
        }
        Ok(Self {
            points,
            intensity: Some(intensity),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Appends `other`; intensities are kept only if both clouds carry them.
    pub fn extend(&mut self, other: PointCloud) {
        self.intensity = match (self.intensity.take(), other.intensity) {
            (Some(mut a), Some(b)) => {
                a.extend(b);
                Some(a)
            }
            (None, _) if self.points.is_empty() && other.points.is_empty() => None,
            (None, Some(b)) if self.points.is_empty() => Some(b),
            _ => None,
        };
        self.points.extend(other.points);
    }
}

/// Rigid transform `p -> R p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extrinsic {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Largest absolute entry of `R^T R - I`.
fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

impl Extrinsic {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Self::with_tolerance(rotation, translation, ROTATION_TOLERANCE)
    }

    pub fn with_tolerance(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        tolerance: f64,
    ) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite extrinsic".into()));
        }
        let err = orthonormality_error(&rotation);
        if err > tolerance {
            return Err(Error::NonOrthonormalRotation(err));
        }
        // orthonormal already, so the determinant is +-1
        let det = rotation.determinant();
        if det < 0.0 {
            return Err(Error::ImproperRotation(det));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self` after `first`: `p -> self(first(p))`.
    pub fn compose(&self, first: &Extrinsic) -> Self {
        Self {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Same mapping as [`Extrinsic::apply`] through the 4x4 homogeneous matrix.
    pub fn apply_homogeneous(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let h = self.to_homogeneous() * Vector4::new(p.x, p.y, p.z, 1.0);
        Vector3::new(h.x, h.y, h.z)
    }
}

/// Pinhole intrinsics and image size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsic {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsic {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square-pixel camera with the principal point at the image centre.
    pub fn from_horizontal_fov(fov_deg: f64, width: usize, height: usize) -> Result<Self> {
        let f = width as f64 / 2.0 / (fov_deg.to_radians() / 2.0).tan();
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx.is_finite() && self.fx > 0.0) {
            return Err(Error::InvalidIntrinsic(format!("fx must be > 0, got {}", self.fx)));
        }
        if !(self.fy.is_finite() && self.fy > 0.0) {
            return Err(Error::InvalidIntrinsic(format!("fy must be > 0, got {}", self.fy)));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::InvalidIntrinsic(format!(
                "cx {} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::InvalidIntrinsic(format!(
                "cy {} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Intrinsics of the sub-image covered by `win`.
    pub fn cropped(&self, win: &Window) -> Self {
        Self {
            cx: self.cx - win.x0 as f64,
            cy: self.cy - win.y0 as f64,
            width: win.width,
            height: win.height,
            ..*self
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProjectedPoints {
    pub pixels: Vec<(f64, f64)>,
    pub depths: Vec<f64>,
    pub source: Vec<usize>,
}

impl ProjectedPoints {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

pub fn transform_to_camera(cloud: &PointCloud, ext: &Extrinsic) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| ext.apply(p)).collect(),
        intensity: cloud.intensity.clone(),
    }
}

/// Pinhole projection keeping points in front of the camera whose pixel
/// coordinates satisfy `0 <= u < W` and `0 <= v < H`.
pub fn project(cloud_cam: &PointCloud, intr: &Intrinsic) -> ProjectedPoints {
    let (w, h) = (intr.width as f64, intr.height as f64);
    let mut out = ProjectedPoints::default();
    for (i, p) in cloud_cam.points.iter().enumerate() {
        if !(p.z > 0.0) {
            continue;
        }
        let u = intr.fx * (p.x / p.z) + intr.cx;
        let v = intr.fy * (p.y / p.z) + intr.cy;
        if (0.0..w).contains(&u) && (0.0..h).contains(&v) {
            out.pixels.push((u, v));
            out.depths.push(p.z);
            out.source.push(i);
        }
    }
    out
}

/// Bins projected points into `floor(u), floor(v)` cells, nearest depth wins.
pub fn rasterize(proj: &ProjectedPoints, intr: &Intrinsic) -> DepthMap {
    let mut map = DepthMap::empty(intr.width, intr.height);
    for (&(u, v), &z) in proj.pixels.iter().zip(&proj.depths) {
        let (cu, cv) = (u.floor() as usize, v.floor() as usize);
        if cu < intr.width && cv < intr.height {
            map.set_min(cu, cv, z);
        }
    }
    map
}

/// Transform, project and rasterize in one pass.
pub fn cloud_to_depth(cloud: &PointCloud, ext: &Extrinsic, intr: &Intrinsic) -> DepthMap {
    rasterize(&project(&transform_to_camera(cloud, ext), intr), intr)
}

/// `size x size` window centred on the rounded principal point, shifted
/// inward when it would leave the image.
pub fn crop_window(intr: &Intrinsic, size: usize) -> Result<Window> {
    if size == 0 || size > intr.width || size > intr.height {
        return Err(Error::CropTooLarge {
            size,
            width: intr.width,
            height: intr.height,
        });
    }
    let start = |c: f64, len: usize| {
        let s = c.round() as i64 - (size / 2) as i64;
        s.clamp(0, (len - size) as i64) as usize
    };
    Ok(Window {
        x0: start(intr.cx, intr.width),
        y0: start(intr.cy, intr.height),
        width: size,
        height: size,
    })
}

/// Grids that can be cut down to a [`Window`].
pub trait Crop: Sized {
    fn dims(&self) -> (usize, usize);
    fn crop_to(&self, win: &Window) -> Result<Self>;
}

impl Crop for ImageRgb {
    fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    fn crop_to(&self, win: &Window) -> Result<Self> {
        self.crop(win)
    }
}

impl Crop for DepthMap {
    fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    fn crop_to(&self, win: &Window) -> Result<Self> {
        self.crop(win)
    }
}

pub fn crop_center<T: Crop>(img: &T, intr: &Intrinsic, size: usize) -> Result<T> {
    if img.dims() != (intr.width, intr.height) {
        return Err(Error::DimensionMismatch {
            left: img.dims(),
            right: (intr.width, intr.height),
        });
    }
    img.crop_to(&crop_window(intr, size)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    fn rot_z(deg: f64) -> Matrix3<f64> {
        let (s, c) = deg.to_radians().sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    #[test]
    fn transform_examples() {
        let cloud = PointCloud::new(vec![v(1.0, 2.0, 3.0), v(-4.0, 0.5, 2.0)]);
        assert_eq!(transform_to_camera(&cloud, &Extrinsic::identity()), cloud);

        let shift = Extrinsic::new(Matrix3::identity(), v(0.0, 0.0, 5.0)).unwrap();
        let out = transform_to_camera(&PointCloud::new(vec![v(1.0, 2.0, 3.0)]), &shift);
        assert_eq!(out.points[0], v(1.0, 2.0, 8.0));

        let quarter = Extrinsic::new(rot_z(90.0), Vector3::zeros()).unwrap();
        let out = quarter.apply(&v(1.0, 0.0, 0.0));
        assert!((out - v(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn extrinsic_rejects_bad_rotations() {
        let mut flip = Matrix3::identity();
        flip[(2, 2)] = -1.0;
        assert!(matches!(
            Extrinsic::new(flip, Vector3::zeros()),
            Err(Error::ImproperRotation(_))
        ));
        let scaled = Matrix3::identity() * 1.01;
        assert!(matches!(
            Extrinsic::new(scaled, Vector3::zeros()),
            Err(Error::NonOrthonormalRotation(_))
        ));
    }

    #[test]
    fn project_examples() {
        let k = Intrinsic::new(1.0, 1.0, 0.0, 0.0, 4, 4).unwrap();
        let p = project(&PointCloud::new(vec![v(0.0, 0.0, 1.0)]), &k);
        assert_eq!(p.pixels, vec![(0.0, 0.0)]);
        assert_eq!(p.depths, vec![1.0]);

        let k = Intrinsic::new(2.0, 2.0, 10.0, 10.0, 20, 20).unwrap();
        let p = project(
            &PointCloud::new(vec![v(1.0, 2.0, 2.0), v(0.0, 0.0, -1.0), v(0.0, 0.0, 0.0)]),
            &k,
        );
        assert_eq!(p.pixels, vec![(11.0, 12.0)]);
        assert_eq!(p.depths, vec![2.0]);
        assert_eq!(p.source, vec![0]);
    }

    #[test]
    fn project_half_open_bounds() {
        let k = Intrinsic::new(1.0, 1.0, 0.0, 0.0, 4, 4).unwrap();
        // u = 4 is outside, u = 3.999 inside, u = -0.001 outside
        let cloud = PointCloud::new(vec![v(4.0, 0.0, 1.0), v(3.999, 0.0, 1.0), v(-0.001, 0.0, 1.0)]);
        assert_eq!(project(&cloud, &k).source, vec![1]);
    }

    #[test]
    fn rasterize_examples() {
        let k = Intrinsic::new(1.0, 1.0, 0.0, 0.0, 4, 4).unwrap();
        let proj = ProjectedPoints {
            pixels: vec![(0.2, 0.7), (2.5, 3.1), (0.9, 0.1)],
            depths: vec![4.0, 3.0, 2.5],
            source: vec![0, 1, 2],
        };
        let map = rasterize(&proj, &k);
        assert_eq!(map.get(0, 0), Some(2.5));
        assert_eq!(map.get(2, 3), Some(3.0));
        assert_eq!(map.valid_count(), 2);

        let empty = rasterize(&ProjectedPoints::default(), &k);
        assert_eq!(empty.valid_count(), 0);
    }

    #[test]
    fn rasterize_min_rule_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = Intrinsic::new(1.0, 1.0, 0.0, 0.0, 6, 5).unwrap();
        let mut proj = ProjectedPoints::default();
        for i in 0..200 {
            proj.pixels.push((rng.random_range(0.0..6.0), rng.random_range(0.0..5.0)));
            proj.depths.push(rng.random_range(0.5..50.0));
            proj.source.push(i);
        }
        let map = rasterize(&proj, &k);
        for cv in 0..5 {
            for cu in 0..6 {
                let expected = proj
                    .pixels
                    .iter()
                    .zip(&proj.depths)
                    .filter(|((u, v), _)| u.floor() as usize == cu && v.floor() as usize == cv)
                    .map(|(_, &d)| d)
                    .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))));
                assert_eq!(map.get(cu, cv), expected);
            }
        }
    }

    #[test]
    fn crop_window_shifts_inward() {
        let k = Intrinsic::new(500.0, 500.0, 400.0, 300.0, 800, 600).unwrap();
        let win = crop_window(&k, 600).unwrap();
        // brute-force: the window must lie inside the image and have the
        // smallest shift from the centred placement among all valid placements
        let ideal = (400 - 300, 300 - 300);
        let best = (0..=200usize)
            .flat_map(|x| (0..=0usize).map(move |y| (x, y)))
            .min_by_key(|&(x, y)| {
                (x as i64 - ideal.0 as i64).abs() + (y as i64 - ideal.1 as i64).abs()
            })
            .unwrap();
        assert_eq!((win.x0, win.y0), best);
        assert_eq!((win.x0, win.y0, win.width, win.height), (100, 0, 600, 600));

        let off = Intrinsic::new(500.0, 500.0, 790.0, 10.0, 800, 600).unwrap();
        let win = crop_window(&off, 600).unwrap();
        assert_eq!((win.x0, win.y0), (200, 0));
    }

    #[test]
    fn crop_identity_and_errors() {
        let k = Intrinsic::new(10.0, 10.0, 2.0, 2.0, 4, 4).unwrap();
        let img = ImageRgb::from_fn(4, 4, |u, v| [u as f64 / 4.0, v as f64 / 4.0, 0.0]).unwrap();
        assert_eq!(crop_center(&img, &k, 4).unwrap(), img);

        let tall = Intrinsic::new(10.0, 10.0, 400.0, 300.0, 800, 600).unwrap();
        assert!(matches!(
            crop_window(&tall, 601),
            Err(Error::CropTooLarge { .. })
        ));
        assert!(crop_center(&img, &tall, 4).is_err());
    }

    #[test]
    fn intrinsic_validation() {
        assert!(Intrinsic::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(Intrinsic::new(1.0, -1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(Intrinsic::new(1.0, 1.0, 4.0, 0.0, 4, 4).is_err());
        assert!(Intrinsic::new(1.0, 1.0, 0.0, -0.5, 4, 4).is_err());
    }

    fn arb_rotation() -> impl Strategy<Value = Matrix3<f64>> {
        (-3.1f64..3.1, -3.1f64..3.1, -3.1f64..3.1).prop_map(|(r, p, y)| {
            *nalgebra::Rotation3::from_euler_angles(r, p, y).matrix()
        })
    }

    proptest! {
        #[test]
        fn rigid_transform_preserves_distances(
            rot in arb_rotation(),
            t in prop::array::uniform3(-10.0f64..10.0),
            p in prop::array::uniform3(-50.0f64..50.0),
            q in prop::array::uniform3(-50.0f64..50.0),
        ) {
            let ext = Extrinsic::new(rot, Vector3::from(t)).unwrap();
            let (p, q) = (Vector3::from(p), Vector3::from(q));
            let d0 = (p - q).norm();
            let d1 = (ext.apply(&p) - ext.apply(&q)).norm();
            prop_assert!((d0 - d1).abs() <= 1e-9);
        }

        #[test]
        fn homogeneous_path_agrees(
            rot in arb_rotation(),
            t in prop::array::uniform3(-10.0f64..10.0),
            p in prop::array::uniform3(-50.0f64..50.0),
        ) {
            let ext = Extrinsic::new(rot, Vector3::from(t)).unwrap();
            let p = Vector3::from(p);
            prop_assert!((ext.apply(&p) - ext.apply_homogeneous(&p)).amax() <= 1e-12);
        }

        #[test]
        fn inverse_round_trips(
            rot in arb_rotation(),
            t in prop::array::uniform3(-10.0f64..10.0),
            p in prop::array::uniform3(-50.0f64..50.0),
        ) {
            let ext = Extrinsic::new(rot, Vector3::from(t)).unwrap();
            let p = Vector3::from(p);
            prop_assert!((ext.inverse().apply(&ext.apply(&p)) - p).amax() <= 1e-9);
        }
    }
}
