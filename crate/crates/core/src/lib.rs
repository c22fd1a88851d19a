//! Core of the DepthVision pipeline: value types, LiDAR-to-camera projection,
//! nearest-neighbour depth densification, luminance-aware modality adaptation,
//! sensor file readers and a procedural scene simulator.

pub mod densify;
pub mod error;
pub mod geometry;
pub mod image;
pub mod ingest;
pub mod io;
pub mod lama;
pub mod simgen;

pub use densify::{densify_nearest, encode_for_generator, DenseDepth};
pub use error::{Error, Result};
pub use geometry::{Extrinsic, Intrinsic, PointCloud, ProjectedPoints};
pub use image::{from_signed, to_signed, DepthMap, GrayImage, ImageRgb, ImageSigned, Window};
pub use ingest::Calibration;
pub use lama::{FusionMode, FusionResult, LamaConfig};
