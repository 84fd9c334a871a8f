//! Interleaved RGB float images.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: u32,
    pub height: u32,
    /// Row-major, 3 channels per pixel.
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [T::zero(); 3])
    }

    pub fn filled(width: u32, height: u32, rgb: [T; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [T; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Columns `[x0, x1)` as a new image.
    pub fn crop_columns(&self, x0: u32, x1: u32) -> Self {
        assert!(x0 < x1 && x1 <= self.width);
        let w = (x1 - x0) as usize;
        let mut data = Vec::with_capacity(w * self.height as usize * 3);
        for y in 0..self.height as usize {
            let start = 3 * (y * self.width as usize + x0 as usize);
            data.extend_from_slice(&self.data[start..start + 3 * w]);
        }
        Self {
            width: x1 - x0,
            height: self.height,
            data,
        }
    }

    /// Places `other` at column `x0` (inverse of [`Image::crop_columns`]).
    pub fn paste_columns(&mut self, other: &Self, x0: u32) {
        assert_eq!(other.height, self.height);
        let w = other.width as usize;
        for y in 0..self.height as usize {
            let dst = 3 * (y * self.width as usize + x0 as usize);
            let src = 3 * y * w;
            self.data[dst..dst + 3 * w].copy_from_slice(&other.data[src..src + 3 * w]);
        }
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&x| U::c(x.f64())).collect(),
        }
    }

    /// 8-bit PNG, values clamped to `[0, 1]`.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.f64().clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let buf = image::RgbImage::from_raw(self.width, self.height, bytes)
            .ok_or_else(|| Error::Image("buffer size does not match dimensions".into()))?;
        buf.save(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        let rgb = img.to_rgb8();
        Ok(Self {
            width: rgb.width(),
            height: rgb.height(),
            data: rgb.as_raw().iter().map(|&b| T::c(b as f64 / 255.0)).collect(),
        })
    }

    /// Raw dump: `u32` width, `u32` height (little endian), then `f32` samples.
    pub fn save_raw(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(8 + 4 * self.data.len());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for &v in &self.data {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn load_raw(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 8 {
            return Err(Error::Image(format!("{}: truncated header", path.display())));
        }
        let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let n = width as usize * height as usize * 3;
        if bytes.len() != 8 + 4 * n {
            return Err(Error::Image(format!("{}: expected {} samples", path.display(), n)));
        }
        let data = bytes[8..]
            .chunks_exact(4)
            .map(|c| T::c(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        Ok(Self { width, height, data })
    }
}

/// Peak signal-to-noise ratio for signals in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Psnr {
    Db(f64),
    /// Images are identical; the ratio is unbounded.
    Exact,
}

impl Psnr {
    /// Finite value for averaging, with identical images mapped to `cap`.
    pub fn capped(self, cap: f64) -> f64 {
        match self {
            Psnr::Db(v) => v.min(cap),
            Psnr::Exact => cap,
        }
    }
}

pub fn mse<T: Real>(a: &Image<T>, b: &Image<T>) -> f64 {
    assert_eq!((a.width, a.height), (b.width, b.height));
    let s: f64 = a.data.iter().zip(&b.data).map(|(&x, &y)| (x.f64() - y.f64()).powi(2)).sum();
    s / a.data.len() as f64
}

pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>) -> Psnr {
    let m = mse(a, b);
    if m == 0.0 {
        Psnr::Exact
    } else {
        Psnr::Db(-10.0 * m.log10())
    }
}
