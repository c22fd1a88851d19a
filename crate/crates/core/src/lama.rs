//! Luminance-aware modality adaptation.
//!
//! The real camera image is blended with the synthesized image using a weight
//! `alpha` derived from the camera image's Rec. 709 luminance: globally from
//! the mean luminance, or per pixel from each pixel's luminance. Luminance is
//! never computed from the synthesized image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GrayImage, ImageRgb};

pub const REC709: [f64; 3] = [0.2126, 0.7152, 0.0722];
pub const DEFAULT_L_LOW: f64 = 0.15;
pub const DEFAULT_L_HIGH: f64 = 0.35;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Full,
    Pixelwise,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LamaConfig {
    pub l_low: f64,
    pub l_high: f64,
    pub mode: FusionMode,
    /// Skip fusion entirely when the mean luminance reaches `l_high`.
    #[serde(default)]
    pub daytime_bypass: bool,
}

impl Default for LamaConfig {
    fn default() -> Self {
        Self {
            l_low: DEFAULT_L_LOW,
            l_high: DEFAULT_L_HIGH,
            mode: FusionMode::Full,
            daytime_bypass: false,
        }
    }
}

impl LamaConfig {
    pub fn new(l_low: f64, l_high: f64, mode: FusionMode) -> Result<Self> {
        let cfg = Self {
            l_low,
            l_high,
            mode,
            daytime_bypass: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.l_low && self.l_low < self.l_high && self.l_high <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "luminance thresholds must satisfy 0 <= l_low < l_high <= 1, got ({}, {})",
                self.l_low, self.l_high
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionResult {
    pub fused: ImageRgb,
    pub alpha: AlphaSummary,
    pub mode: FusionMode,
    /// True when the daytime bypass returned the camera image untouched.
    pub bypassed: bool,
}

pub fn luma(px: &[f64]) -> f64 {
    (REC709[0] * px[0] + REC709[1] * px[1] + REC709[2] * px[2]).clamp(0.0, 1.0)
}

pub fn to_gray(img: &ImageRgb) -> GrayImage {
    let lum = img.pixels().map(luma).collect();
    GrayImage::new(img.width(), img.height(), lum).expect("luma of a valid image is in [0, 1]")
}

pub fn mean_luminance(gray: &GrayImage) -> Result<f64> {
    let lum = gray.luminance();
    if lum.is_empty() {
        return Err(Error::EmptyImage);
    }
    Ok((lum.iter().sum::<f64>() / lum.len() as f64).clamp(0.0, 1.0))
}

fn ramp(l: f64, cfg: &LamaConfig) -> f64 {
    if l <= cfg.l_low {
        0.0
    } else if l >= cfg.l_high {
        1.0
    } else {
        ((l - cfg.l_low) / (cfg.l_high - cfg.l_low)).clamp(0.0, 1.0)
    }
}

/// Three-branch weight: 0 at or below `l_low`, 1 at or above `l_high`,
/// linear in between.
pub fn alpha_global(l_mean: f64, cfg: &LamaConfig) -> f64 {
    ramp(l_mean, cfg)
}

fn check_dims(rgb: &ImageRgb, gan: &ImageRgb) -> Result<()> {
    if rgb.dims() != gan.dims() {
        return Err(Error::DimensionMismatch {
            left: rgb.dims(),
            right: gan.dims(),
        });
    }
    Ok(())
}

/// `alpha * a + (1 - alpha) * b`, kept inside `[min(a, b), max(a, b)]`.
#[inline]
fn blend(alpha: f64, a: f64, b: f64) -> f64 {
    let v = alpha * a + (1.0 - alpha) * b;
    v.clamp(a.min(b), a.max(b))
}

pub fn fuse_full(rgb: &ImageRgb, gan: &ImageRgb, cfg: &LamaConfig) -> Result<FusionResult> {
    check_dims(rgb, gan)?;
    let alpha = alpha_global(mean_luminance(&to_gray(rgb))?, cfg);
    let fused = if alpha == 0.0 {
        gan.clone()
    } else if alpha == 1.0 {
        rgb.clone()
    } else {
        let data = rgb
            .data()
            .iter()
            .zip(gan.data())
            .map(|(&a, &b)| blend(alpha, a, b))
            .collect();
        ImageRgb::new(rgb.width(), rgb.height(), data)?
    };
    Ok(FusionResult {
        fused,
        alpha: AlphaSummary {
            mean: alpha,
            min: alpha,
            max: alpha,
        },
        mode: FusionMode::Full,
        bypassed: false,
    })
}

/// Per-pixel weights `clamp((gray - l_low) / (l_high - l_low), 0, 1)`.
pub fn alpha_map(rgb: &ImageRgb, cfg: &LamaConfig) -> Vec<f64> {
    rgb.pixels().map(|px| ramp(luma(px), cfg)).collect()
}

pub fn fuse_pixelwise(rgb: &ImageRgb, gan: &ImageRgb, cfg: &LamaConfig) -> Result<FusionResult> {
    check_dims(rgb, gan)?;
    if rgb.width() * rgb.height() == 0 {
        return Err(Error::EmptyImage);
    }
    let alphas = alpha_map(rgb, cfg);
    let mut data = Vec::with_capacity(rgb.data().len());
    for ((a_px, b_px), &alpha) in rgb.pixels().zip(gan.pixels()).zip(&alphas) {
        for c in 0..3 {
            data.push(if alpha == 0.0 {
                b_px[c]
            } else if alpha == 1.0 {
                a_px[c]
            } else {
                blend(alpha, a_px[c], b_px[c])
            });
        }
    }
    let (min, max) = alphas
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| {
            (lo.min(a), hi.max(a))
        });
    Ok(FusionResult {
        fused: ImageRgb::new(rgb.width(), rgb.height(), data)?,
        alpha: AlphaSummary {
            mean: alphas.iter().sum::<f64>() / alphas.len() as f64,
            min,
            max,
        },
        mode: FusionMode::Pixelwise,
        bypassed: false,
    })
}

/// Dispatches on `cfg.mode`, honouring the daytime bypass.
pub fn fuse(rgb: &ImageRgb, gan: &ImageRgb, cfg: &LamaConfig) -> Result<FusionResult> {
    if cfg.daytime_bypass && is_daytime(rgb, cfg)? {
        check_dims(rgb, gan)?;
        return Ok(bypass(rgb, cfg.mode));
    }
    match cfg.mode {
        FusionMode::Full => fuse_full(rgb, gan, cfg),
        FusionMode::Pixelwise => fuse_pixelwise(rgb, gan, cfg),
    }
}

pub fn is_daytime(rgb: &ImageRgb, cfg: &LamaConfig) -> Result<bool> {
    Ok(mean_luminance(&to_gray(rgb))? >= cfg.l_high)
}

/// Result returned when fusion is skipped: the camera image with alpha 1.
pub fn bypass(rgb: &ImageRgb, mode: FusionMode) -> FusionResult {
    FusionResult {
        fused: rgb.clone(),
        alpha: AlphaSummary {
            mean: 1.0,
            min: 1.0,
            max: 1.0,
        },
        mode,
        bypassed: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> LamaConfig {
        LamaConfig::default()
    }

    #[test]
    fn gray_coefficients() {
        let gray = |rgb| to_gray(&ImageRgb::filled(1, 1, rgb).unwrap()).luminance()[0];
        assert!((gray([1.0, 1.0, 1.0]) - 1.0).abs() < 1e-15);
        assert_eq!(gray([1.0, 0.0, 0.0]), 0.2126);
        assert_eq!(gray([0.0, 1.0, 0.0]), 0.7152);
        assert_eq!(gray([0.0, 0.0, 1.0]), 0.0722);
    }

    #[test]
    fn mean_luminance_examples() {
        let g = GrayImage::new(2, 2, vec![0.3; 4]).unwrap();
        assert!((mean_luminance(&g).unwrap() - 0.3).abs() < 1e-15);
        let g = GrayImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(mean_luminance(&g).unwrap(), 0.5);
        let g = GrayImage::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((mean_luminance(&g).unwrap() - 0.25).abs() < 1e-15);
        let g = GrayImage::new(0, 0, vec![]).unwrap();
        assert!(matches!(mean_luminance(&g), Err(Error::EmptyImage)));
    }

    #[test]
    fn alpha_branches() {
        assert_eq!(alpha_global(0.15, &cfg()), 0.0);
        assert_eq!(alpha_global(0.0, &cfg()), 0.0);
        assert_eq!(alpha_global(0.35, &cfg()), 1.0);
        assert_eq!(alpha_global(1.0, &cfg()), 1.0);
        assert!((alpha_global(0.25, &cfg()) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(LamaConfig::new(0.35, 0.15, FusionMode::Full).is_err());
        assert!(LamaConfig::new(0.2, 0.2, FusionMode::Full).is_err());
        assert!(LamaConfig::new(-0.1, 0.2, FusionMode::Full).is_err());
        assert!(LamaConfig::new(0.0, 1.0, FusionMode::Pixelwise).is_ok());
    }

    #[test]
    fn full_fusion_examples() {
        let gan = ImageRgb::from_fn(4, 3, |u, v| [u as f64 / 4.0, 0.3, v as f64 / 3.0]).unwrap();
        let black = ImageRgb::filled(4, 3, [0.0; 3]).unwrap();
        assert_eq!(fuse_full(&black, &gan, &cfg()).unwrap().fused, gan);

        let bright = ImageRgb::filled(4, 3, [0.9; 3]).unwrap();
        assert_eq!(fuse_full(&bright, &gan, &cfg()).unwrap().fused, bright);

        let rgb = ImageRgb::filled(4, 3, [0.25; 3]).unwrap();
        let gan = ImageRgb::filled(4, 3, [0.75; 3]).unwrap();
        let res = fuse_full(&rgb, &gan, &cfg()).unwrap();
        assert!((res.alpha.mean - 0.5).abs() < 1e-12);
        assert!(res.fused.data().iter().all(|v| (v - 0.5).abs() < 1e-12));

        let small = ImageRgb::filled(2, 3, [0.25; 3]).unwrap();
        assert!(matches!(
            fuse_full(&small, &gan, &cfg()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn pixelwise_examples() {
        // left pixel gray 0.05, right pixel gray 0.95
        let rgb = ImageRgb::new(2, 1, vec![0.05, 0.05, 0.05, 0.95, 0.95, 0.95]).unwrap();
        let gan = ImageRgb::new(2, 1, vec![0.7, 0.2, 0.4, 0.1, 0.6, 0.3]).unwrap();
        let res = fuse_pixelwise(&rgb, &gan, &cfg()).unwrap();
        assert_eq!(res.fused.pixel(0, 0), gan.pixel(0, 0));
        assert_eq!(res.fused.pixel(1, 0), rgb.pixel(1, 0));
        assert_eq!((res.alpha.min, res.alpha.max), (0.0, 1.0));
    }

    #[test]
    fn bypass_returns_camera_image() {
        let rgb = ImageRgb::filled(2, 2, [0.8; 3]).unwrap();
        let gan = ImageRgb::filled(2, 2, [0.1; 3]).unwrap();
        let cfg = LamaConfig {
            daytime_bypass: true,
            mode: FusionMode::Pixelwise,
            ..cfg()
        };
        let res = fuse(&rgb, &gan, &cfg).unwrap();
        assert!(res.bypassed);
        assert_eq!(res.fused, rgb);
        let dark = ImageRgb::filled(2, 2, [0.05; 3]).unwrap();
        assert!(!fuse(&dark, &gan, &cfg).unwrap().bypassed);
    }

    proptest! {
        #[test]
        fn alpha_is_lipschitz(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let c = cfg();
            let bound = (a - b).abs() / (c.l_high - c.l_low);
            prop_assert!((alpha_global(a, &c) - alpha_global(b, &c)).abs() <= bound + 1e-12);
        }

        #[test]
        fn uniform_luminance_modes_agree(v in 0.0f64..=1.0, g in prop::array::uniform3(0.0f64..=1.0)) {
            let rgb = ImageRgb::filled(3, 2, [v; 3]).unwrap();
            let gan = ImageRgb::filled(3, 2, g).unwrap();
            let full = fuse_full(&rgb, &gan, &cfg()).unwrap().fused;
            let pix = fuse_pixelwise(&rgb, &gan, &cfg()).unwrap().fused;
            for (a, b) in full.data().iter().zip(pix.data()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn pixel_alpha_is_monotone(px in prop::array::uniform3(0.0f64..=1.0), c in 0usize..3, bump in 0.0f64..=1.0) {
            let mut brighter = px;
            brighter[c] = (brighter[c] + bump).min(1.0);
            let lo = ImageRgb::filled(1, 1, px).unwrap();
            let hi = ImageRgb::filled(1, 1, brighter).unwrap();
            prop_assert!(alpha_map(&hi, &cfg())[0] >= alpha_map(&lo, &cfg())[0]);
        }
    }
}
