//! Plain in-memory image buffers and their PNG encodings.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

/// Linear RGB image with channels in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f64; 3]>,
}

/// Per-pixel camera-frame depth in meters; `0` marks a missing measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        RgbImage {
            width,
            height,
            data: vec![[0.0; 3]; width as usize * height as usize],
        }
    }

    pub fn filled(width: u32, height: u32, value: [f64; 3]) -> Self {
        RgbImage {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn index(&self, i: u32, j: u32) -> usize {
        j as usize * self.width as usize + i as usize
    }

    pub fn get(&self, i: u32, j: u32) -> [f64; 3] {
        self.data[self.index(i, j)]
    }

    pub fn set(&mut self, i: u32, j: u32, v: [f64; 3]) {
        let k = self.index(i, j);
        self.data[k] = v;
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|c| c.iter().map(|&v| quantize_unit(v)))
            .collect()
    }

    pub fn from_rgb8(width: u32, height: u32, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width as usize * height as usize * 3 {
            return Err(Error::Shape(format!(
                "{} bytes do not form a {width}x{height} RGB image",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(3)
            .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
            .collect();
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width, self.height, self.to_rgb8())
                .expect("buffer size matches dimensions");
        buf.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_rgb8(w, h, img.as_raw())
    }
}

fn quantize_unit(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl DepthMap {
    pub fn new(width: u32, height: u32) -> Self {
        DepthMap {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn get(&self, i: u32, j: u32) -> f64 {
        self.data[j as usize * self.width as usize + i as usize]
    }

    pub fn set(&mut self, i: u32, j: u32, v: f64) {
        let w = self.width as usize;
        self.data[j as usize * w + i as usize] = v;
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&d| d > 0.0).count()
    }

    /// Millimeter quantization used on disk; saturates at `u16::MAX`.
    pub fn to_millimeters(&self) -> Vec<u16> {
        self.data
            .iter()
            .map(|&d| (d * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16)
            .collect()
    }

    pub fn from_millimeters(width: u32, height: u32, mm: &[u16]) -> Result<Self> {
        if mm.len() != width as usize * height as usize {
            return Err(Error::Shape(format!(
                "{} samples do not form a {width}x{height} depth map",
                mm.len()
            )));
        }
        Ok(DepthMap {
            width,
            height,
            data: mm.iter().map(|&v| v as f64 / 1000.0).collect(),
        })
    }

    pub fn save_png16(&self, path: &Path) -> Result<()> {
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width, self.height, self.to_millimeters())
                .expect("buffer size matches dimensions");
        buf.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_png16(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_luma16();
        let (w, h) = img.dimensions();
        Self::from_millimeters(w, h, img.as_raw())
    }

    /// Grayscale visualization scaled by `max_depth`.
    pub fn to_preview(&self, max_depth: f64) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&d| {
                    let v = (d / max_depth).clamp(0.0, 1.0);
                    [v, v, v]
                })
                .collect(),
        }
    }
}
