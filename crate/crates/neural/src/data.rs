//! Conversion of depth maps and camera images to network tensors and back.

use depthvision_core::geometry::{cloud_to_depth, crop_center};
use depthvision_core::ingest::Calibration;
use depthvision_core::{
    densify_nearest, encode_for_generator, from_signed, to_signed, DepthMap, ImageRgb, ImageSigned, PointCloud,
};

use crate::error::{NeuralError, Result};
use crate::nets::{ArchConfig, Model};
use crate::tensor::Tensor4;

/// One `(depth, target RGB)` example in the generator's signed range.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub depth: ImageSigned,
    pub target: ImageSigned,
}

/// Densify, encode and resample a sparse depth map to the generator size.
pub fn depth_input(sparse: &DepthMap, arch: &ArchConfig) -> Result<ImageSigned> {
    let dense = densify_nearest(sparse)?;
    let enc = encode_for_generator(&dense, arch.max_range)?;
    Ok(enc.resize_bilinear(arch.image_size, arch.image_size)?)
}

pub fn target_image(rgb: &ImageRgb, arch: &ArchConfig) -> Result<ImageSigned> {
    Ok(to_signed(rgb).resize_bilinear(arch.image_size, arch.image_size)?)
}

pub fn make_pair(sparse: &DepthMap, rgb: &ImageRgb, arch: &ArchConfig) -> Result<TrainingPair> {
    if (sparse.width(), sparse.height()) != rgb.dims() {
        return Err(depthvision_core::Error::DimensionMismatch {
            left: (sparse.width(), sparse.height()),
            right: rgb.dims(),
        }
        .into());
    }
    Ok(TrainingPair {
        depth: depth_input(sparse, arch)?,
        target: target_image(rgb, arch)?,
    })
}

/// Projects `cloud`, crops the largest centred square from both modalities
/// and builds a pair.
pub fn pair_from_cloud(
    cloud: &PointCloud,
    rgb: &ImageRgb,
    calib: &Calibration,
    arch: &ArchConfig,
) -> Result<TrainingPair> {
    let intr = &calib.intrinsic;
    let sparse = cloud_to_depth(cloud, &calib.extrinsic, intr);
    let side = intr.width.min(intr.height);
    let sparse = crop_center(&sparse, intr, side)?;
    let rgb = crop_center(rgb, intr, side)?;
    make_pair(&sparse, &rgb, arch)
}

/// Full synthesis: densify, encode, resample to the generator size, run the
/// generator and refiner, and resample back to the input size.
pub fn synthesize(model: &Model, sparse: &DepthMap) -> Result<ImageRgb> {
    let input = depth_input(sparse, &model.arch)?;
    let out = model.synthesize(&Tensor4::from_image(&input))?;
    to_rgb(&out, sparse.width(), sparse.height())
}

/// Batch item 0 resampled to `width x height` in the `[0, 1]` range.
pub fn to_rgb(out: &Tensor4, width: usize, height: usize) -> Result<ImageRgb> {
    if out.batch() == 0 || out.channels() != 3 {
        return Err(NeuralError::Shape {
            op: "to_rgb",
            left: out.shape().to_vec(),
            right: vec![1, 3],
        });
    }
    let img = out.to_image(0)?.resize_bilinear(width, height)?;
    Ok(from_signed(&img)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use depthvision_core::simgen::{simulate_scene, DatasetOptions, SensorRig};

    #[test]
    fn simulated_scene_pair_shapes() {
        let opts = DatasetOptions {
            width: 48,
            height: 32,
            ..DatasetOptions::default()
        };
        let rig = SensorRig::desk(48, 32).unwrap();
        let s = simulate_scene(3, rig, &opts, 1.0, "s").unwrap();
        let arch = ArchConfig::desk(32);
        let p = pair_from_cloud(&s.cloud, &s.day, &rig.calibration, &arch).unwrap();
        assert_eq!((p.depth.width(), p.depth.height(), p.depth.channels()), (32, 32, 1));
        assert_eq!((p.target.width(), p.target.height(), p.target.channels()), (32, 32, 3));
        assert!(p.depth.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn synthesize_returns_input_resolution() {
        let model = Model::new(ArchConfig::desk(32), 0).unwrap();
        let mut sparse = DepthMap::empty(40, 40);
        sparse.set_min(3, 4, 12.0);
        sparse.set_min(30, 20, 50.0);
        let img = synthesize(&model, &sparse).unwrap();
        assert_eq!(img.dims(), (40, 40));
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(synthesize(&model, &DepthMap::empty(8, 8)).is_err());
    }

    #[test]
    fn mismatched_pair_is_rejected() {
        let arch = ArchConfig::desk(32);
        let rgb = ImageRgb::filled(10, 12, [0.5; 3]).unwrap();
        let mut sparse = DepthMap::empty(12, 10);
        sparse.set_min(0, 0, 1.0);
        assert!(make_pair(&sparse, &rgb, &arch).is_err());
    }
}
