//! Pixel grids shared by every stage of the pipeline.
//!
//! All grids are row-major with `(u, v) = (column, row)` addressing. The
//! canonical colour range is `[0, 1]`; the signed `[-1, 1]` range only exists
//! at the boundary of the neural networks.

use crate::error::{Error, Result};

/// Rectangular region of a grid, `[x0, x0 + width) x [y0, y0 + height)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

fn check_range(data: &[f64], lo: f64, hi: f64, what: &str) -> Result<()> {
    if let Some((i, v)) = data
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= lo && **v <= hi))
    {
        return Err(Error::InvalidImage(format!(
            "{what} value {v} at index {i} outside [{lo}, {hi}]"
        )));
    }
    Ok(())
}

fn check_len(len: usize, width: usize, height: usize, channels: usize) -> Result<()> {
    if len != width * height * channels {
        return Err(Error::InvalidImage(format!(
            "data length {len} != {width}x{height}x{channels}"
        )));
    }
    Ok(())
}

fn crop_planes<T: Copy>(
    data: &[T],
    width: usize,
    height: usize,
    channels: usize,
    win: &Window,
) -> Result<Vec<T>> {
    if win.x0 + win.width > width || win.y0 + win.height > height {
        return Err(Error::InvalidArgument(format!(
            "window {win:?} exceeds {width}x{height}"
        )));
    }
    let mut out = Vec::with_capacity(win.width * win.height * channels);
    for y in win.y0..win.y0 + win.height {
        let start = (y * width + win.x0) * channels;
        out.extend_from_slice(&data[start..start + win.width * channels]);
    }
    Ok(out)
}

/// Three-channel colour image with interleaved `R, G, B` values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRgb {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_len(data.len(), width, height, 3)?;
        check_range(&data, 0.0, 1.0, "rgb")?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, data)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for v in 0..height {
            for u in 0..width {
                data.extend_from_slice(&f(u, v));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, u: usize, v: usize) -> [f64; 3] {
        let i = (v * self.width + u) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(3)
    }

    pub fn crop(&self, win: &Window) -> Result<Self> {
        let data = crop_planes(&self.data, self.width, self.height, 3, win)?;
        Ok(Self {
            width: win.width,
            height: win.height,
            data,
        })
    }
}

/// Image in the signed `[-1, 1]` range used at the neural boundary.
///
/// Unlike [`ImageRgb`] the layout is planar (channel-major), matching the
/// `(channels, height, width)` tensor layout of the networks.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSigned {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageSigned {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_len(data.len(), width, height, channels)?;
        check_range(&data, -1.0, 1.0, "signed")?;
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    /// Bilinear resampling with half-pixel centres and edge clamping.
    ///
    /// Resizing to the same size is an exact identity.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("resize to an empty grid".into()));
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let taps = |dst: usize, scale: f64, len: usize| {
            let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        };
        let xs: Vec<_> = (0..width).map(|x| taps(x, sx, self.width)).collect();
        let ys: Vec<_> = (0..height).map(|y| taps(y, sy, self.height)).collect();

        let mut data = Vec::with_capacity(width * height * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for &(y0, y1, fy) in &ys {
                for &(x0, x1, fx) in &xs {
                    let at = |x: usize, y: usize| plane[y * self.width + x];
                    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                    data.push((top * (1.0 - fy) + bottom * fy).clamp(-1.0, 1.0));
                }
            }
        }
        Ok(Self {
            width,
            height,
            channels: self.channels,
            data,
        })
    }
}

/// Single-channel luminance image in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    luminance: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, luminance: Vec<f64>) -> Result<Self> {
        check_len(luminance.len(), width, height, 1)?;
        check_range(&luminance, 0.0, 1.0, "luminance")?;
        Ok(Self {
            width,
            height,
            luminance,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn luminance(&self) -> &[f64] {
        &self.luminance
    }
}

/// Per-pixel depth in meters with a validity mask.
///
/// Invalid pixels hold `0.0`, which no operation reads.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn new(width: usize, height: usize, depth: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        check_len(depth.len(), width, height, 1)?;
        check_len(valid.len(), width, height, 1)?;
        let mut depth = depth;
        for (d, &ok) in depth.iter_mut().zip(&valid) {
            if ok {
                if !(d.is_finite() && *d >= 0.0) {
                    return Err(Error::InvalidImage(format!("invalid depth {d}")));
                }
            } else {
                *d = 0.0;
            }
        }
        Ok(Self {
            width,
            height,
            depth,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let i = v * self.width + u;
        self.valid[i].then(|| self.depth[i])
    }

    /// Keeps the smaller of the stored and offered depth.
    pub fn set_min(&mut self, u: usize, v: usize, depth: f64) {
        let i = v * self.width + u;
        if !self.valid[i] || depth < self.depth[i] {
            self.depth[i] = depth;
            self.valid[i] = true;
        }
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn crop(&self, win: &Window) -> Result<Self> {
        Ok(Self {
            width: win.width,
            height: win.height,
            depth: crop_planes(&self.depth, self.width, self.height, 1, win)?,
            valid: crop_planes(&self.valid, self.width, self.height, 1, win)?,
        })
    }
}

/// Maps `[0, 1]` to `[-1, 1]` with `v -> 2v - 1`, producing planar channels.
pub fn to_signed(img: &ImageRgb) -> ImageSigned {
    let n = img.width * img.height;
    let mut data = vec![0.0; n * 3];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * n + i] = 2.0 * px[c] - 1.0;
        }
    }
    ImageSigned {
        width: img.width,
        height: img.height,
        channels: 3,
        data,
    }
}

/// Maps a three-channel signed image back to `[0, 1]` with `(v + 1) / 2`.
pub fn from_signed(img: &ImageSigned) -> Result<ImageRgb> {
    if img.channels != 3 {
        return Err(Error::InvalidImage(format!(
            "expected 3 channels, got {}",
            img.channels
        )));
    }
    let n = img.width * img.height;
    let mut data = Vec::with_capacity(n * 3);
    for i in 0..n {
        for c in 0..3 {
            data.push(((img.data[c * n + i] + 1.0) / 2.0).clamp(0.0, 1.0));
        }
    }
    Ok(ImageRgb {
        width: img.width,
        height: img.height,
        data,
    })
}
