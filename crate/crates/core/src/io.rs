//! Image serialization: 8-bit PNG for inspection, `DVIM` float dumps for
//! bit-exact comparisons.
//!
//! A `DVIM` file is a 16-byte header (`b"DVIM"`, then `u32` width, height and
//! channel count, little-endian) followed by `width * height * channels`
//! little-endian `f64` values in the producing type's native layout.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{DepthMap, ImageRgb, ImageSigned};

pub const DVIM_MAGIC: &[u8; 4] = b"DVIM";

/// Encodes an image as 8-bit RGB PNG with `round(255 * v)` per channel.
pub fn encode_png(img: &ImageRgb) -> Vec<u8> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("png header to memory");
        w.write_image_data(&bytes).expect("png data to memory");
    }
    out
}

pub fn decode_png(bytes: &[u8]) -> std::result::Result<ImageRgb, String> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or("png too large")?];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let buf = &buf[..info.buffer_size()];
    let (w, h) = (info.width as usize, info.height as usize);
    let data: Vec<f64> = match info.color_type {
        png::ColorType::Rgb => buf.iter().map(|&b| b as f64 / 255.0).collect(),
        png::ColorType::Rgba => buf
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .map(|b| b as f64 / 255.0)
            .collect(),
        png::ColorType::Grayscale => buf
            .iter()
            .flat_map(|&b| [b; 3])
            .map(|b| b as f64 / 255.0)
            .collect(),
        png::ColorType::GrayscaleAlpha => buf
            .chunks_exact(2)
            .flat_map(|p| [p[0]; 3])
            .map(|b| b as f64 / 255.0)
            .collect(),
        other => return Err(format!("unsupported png color type {other:?}")),
    };
    ImageRgb::new(w, h, data).map_err(|e| e.to_string())
}

pub fn write_png(path: &Path, img: &ImageRgb) -> Result<()> {
    fs::write(path, encode_png(img)).map_err(|e| Error::io(path, e))
}

pub fn read_png(path: &Path) -> Result<ImageRgb> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes).map_err(|m| Error::format(path, m))
}

/// Untyped float grid as stored in a `DVIM` dump.
#[derive(Clone, Debug, PartialEq)]
pub struct RawGrid {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl RawGrid {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 8);
        out.extend_from_slice(DVIM_MAGIC);
        for dim in [self.width, self.height, self.channels] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 16 || &bytes[..4] != DVIM_MAGIC {
            return Err("missing DVIM header".into());
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (width, height, channels) = (dim(4), dim(8), dim(12));
        let n = width * height * channels;
        if bytes.len() != 16 + n * 8 {
            return Err(format!(
                "expected {} payload bytes, found {}",
                n * 8,
                bytes.len() - 16
            ));
        }
        let data = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|m| Error::format(path, m))
    }
}

impl From<&ImageRgb> for RawGrid {
    fn from(img: &ImageRgb) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            channels: 3,
            data: img.data().to_vec(),
        }
    }
}

impl From<&ImageSigned> for RawGrid {
    fn from(img: &ImageSigned) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            channels: img.channels(),
            data: img.data().to_vec(),
        }
    }
}

/// Depth maps dump as one channel with `NaN` at invalid pixels.
impl From<&DepthMap> for RawGrid {
    fn from(map: &DepthMap) -> Self {
        let data = map
            .depth()
            .iter()
            .zip(map.valid())
            .map(|(&d, &ok)| if ok { d } else { f64::NAN })
            .collect();
        Self {
            width: map.width(),
            height: map.height(),
            channels: 1,
            data,
        }
    }
}

impl RawGrid {
    pub fn into_rgb(self) -> Result<ImageRgb> {
        if self.channels != 3 {
            return Err(Error::InvalidImage(format!(
                "expected 3 channels, got {}",
                self.channels
            )));
        }
        ImageRgb::new(self.width, self.height, self.data)
    }

    pub fn into_signed(self) -> Result<ImageSigned> {
        ImageSigned::new(self.width, self.height, self.channels, self.data)
    }

    pub fn into_depth(self) -> Result<DepthMap> {
        if self.channels != 1 {
            return Err(Error::InvalidImage(format!(
                "expected 1 channel, got {}",
                self.channels
            )));
        }
        let valid = self.data.iter().map(|d| !d.is_nan()).collect();
        DepthMap::new(self.width, self.height, self.data, valid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_of_quantized_values() {
        let img = ImageRgb::from_fn(5, 3, |u, v| {
            [u as f64 / 255.0, v as f64 * 10.0 / 255.0, 1.0]
        })
        .unwrap();
        let back = decode_png(&encode_png(&img)).unwrap();
        assert_eq!(back.dims(), (5, 3));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dvim_is_bit_exact() {
        let img = ImageRgb::from_fn(3, 2, |u, v| [0.1 * u as f64, 1.0 / 3.0, v as f64]).unwrap();
        let raw = RawGrid::from(&img);
        let bytes = raw.to_bytes();
        assert_eq!(&bytes[..4], b"DVIM");
        assert_eq!(bytes.len(), 16 + 18 * 8);
        let back = RawGrid::from_bytes(&bytes).unwrap().into_rgb().unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn dvim_depth_keeps_mask() {
        let map = DepthMap::new(2, 2, vec![1.5, 0.0, 0.0, 7.25], vec![true, false, true, true])
            .unwrap();
        let back = RawGrid::from_bytes(&RawGrid::from(&map).to_bytes())
            .unwrap()
            .into_depth()
            .unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn dvim_rejects_truncation() {
        let raw = RawGrid {
            width: 2,
            height: 1,
            channels: 1,
            data: vec![1.0, 2.0],
        };
        let bytes = raw.to_bytes();
        assert!(RawGrid::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(RawGrid::from_bytes(b"DVI").is_err());
    }
}
