//! Grayscale rasters and binary masks shared by every pipeline stage.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    ZeroSized { width: usize, height: usize },
    #[error("pixel buffer holds {got} values, expected {expected}")]
    BufferLength { expected: usize, got: usize },
    #[error("pixel {index} has value {value}, outside [0, 255]")]
    OutOfRange { index: usize, value: f64 },
    #[error("failed to decode {path}: {message}")]
    Decode { path: String, message: String },
    #[error("failed to encode {path}: {message}")]
    Encode { path: String, message: String },
}

/// Row-major intensity raster with values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroSized { width, height });
        }
        if pixels.len() != width * height {
            return Err(ImageError::BufferLength {
                expected: width * height,
                got: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 255.0)
        {
            return Err(ImageError::OutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Image filled with a single value. Panics on zero dimensions or an out-of-range value.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        assert!((0.0..=255.0).contains(&value), "fill value out of range");
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    /// Builds an image from a closure evaluated at every `(x, y)`; results are clamped to `[0, 255]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(clamp_intensity(f(x, y)));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    /// Takes ownership of a buffer whose values the caller already guarantees are in range.
    pub(crate) fn from_raw_clamped(width: usize, height: usize, mut pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        for p in &mut pixels {
            *p = clamp_intensity(*p);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.pixels[y * self.width + x] = clamp_intensity(value);
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    /// Bilinear sample at a fractional position. Returns `None` outside `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y) {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = lerp(self.get(x0, y0), self.get(x1, y0), fx);
        let bottom = lerp(self.get(x0, y1), self.get(x1, y1), fx);
        Some(lerp(top, bottom, fy))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Rounds to the nearest 8-bit level for encoding.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// The image exactly as it reads back from its PNG encoding.
    pub fn quantized(&self) -> GrayImage {
        Self::from_u8(self.width, self.height, &self.to_u8()).expect("same dimensions")
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self, ImageError> {
        Self::new(width, height, bytes.iter().map(|&b| f64::from(b)).collect())
    }

    /// Writes an 8-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let buffer =
            image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_u8())
                .expect("buffer length matches dimensions");
        buffer.save(path).map_err(|e| ImageError::Encode {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Mean absolute difference over the pixels selected by `keep`.
    pub fn mean_abs_diff(&self, other: &GrayImage, keep: impl Fn(usize, usize) -> bool) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let mut sum = 0.0;
        let mut count = 0usize;
        for y in 0..self.height {
            for x in 0..self.width {
                if keep(x, y) {
                    sum += (self.get(x, y) - other.get(x, y)).abs();
                    count += 1;
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }
}

#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

#[inline]
pub(crate) fn clamp_intensity(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 255.0)
    }
}

/// Boolean raster with the same layout as [`GrayImage`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask buffer length");
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self::new(width, height, bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Out-of-bounds coordinates read as `false`.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.get(x as usize, y as usize)
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn and(&self, other: &Mask) -> Mask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        Mask::new(
            self.width,
            self.height,
            self.bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a && b)
                .collect(),
        )
    }

    /// Iterates the coordinates of set pixels in raster order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_raw_clamped(
            self.width,
            self.height,
            self.bits
                .iter()
                .map(|&b| if b { 255.0 } else { 0.0 })
                .collect(),
        )
    }
}
