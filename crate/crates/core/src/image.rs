//! Raster images in normalized floating intensities.
//!
//! Everything inside the pipeline works on [`Image`] values whose samples lie
//! in `[0, 1]`; conversion to and from 8-bit happens only when reading or
//! writing files.

use std::io;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, ImageError as CodecError, Luma, Rgb, RgbImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image data: {0}")]
    CorruptData(String),
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// An `height × width × channels` raster, row-major with interleaved channels
/// (RGB order for color images).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    /// Builds an image, validating dimensions and the intensity range.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::Invalid(format!("empty image {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::Invalid(format!("unsupported channel count {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(ImageError::Invalid(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::Invalid(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Image { height, width, channels, data })
    }

    /// Like [`Image::new`] but clamps out-of-range (and NaN) samples into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, channels: usize, mut data: Vec<f32>) -> Result<Self, ImageError> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self, ImageError> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from 8-bit samples.
    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self, ImageError> {
        Self::new(height, width, channels, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Extracts one channel as a row-major plane.
    pub fn plane(&self, channel: usize) -> Vec<f32> {
        self.data.iter().skip(channel).step_by(self.channels).copied().collect()
    }

    /// Channel-major copy (`C × H × W`), the layout the networks consume.
    pub fn to_planar(&self) -> Vec<f32> {
        (0..self.channels).flat_map(|c| self.plane(c)).collect()
    }

    /// Inverse of [`Image::to_planar`]; samples are clamped into `[0, 1]`.
    pub fn from_planar(height: usize, width: usize, channels: usize, planar: &[f32]) -> Result<Self, ImageError> {
        let hw = height * width;
        if planar.len() != hw * channels {
            return Err(ImageError::Invalid("planar buffer size mismatch".into()));
        }
        let mut data = vec![0.0; planar.len()];
        for c in 0..channels {
            for i in 0..hw {
                data[i * channels + c] = planar[c * hw + i];
            }
        }
        Self::from_clamped(height, width, channels, data)
    }

    /// Copies out a `size × size` window starting at `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Image, ImageError> {
        if row + h > self.height || col + w > self.width || h == 0 || w == 0 {
            return Err(ImageError::Invalid(format!(
                "crop {h}x{w} at ({row},{col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for r in row..row + h {
            let start = (r * self.width + col) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(Image { height: h, width: w, channels: c, data })
    }

    /// Quantizes every sample to the nearest 8-bit level.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v)).collect()
    }
}

#[inline]
pub(crate) fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Decodes a PNG or JPEG file. Color sources yield 3 channels, grayscale 1.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(ImageError::FileNotFound(path.display().to_string()));
    }
    let bytes = std::fs::read(path)?;
    decode_image(&bytes)
}

/// Decodes an in-memory PNG or JPEG stream.
pub fn decode_image(bytes: &[u8]) -> Result<Image, ImageError> {
    let format = image::guess_format(bytes).map_err(|e| ImageError::UnsupportedFormat(e.to_string()))?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
        return Err(ImageError::UnsupportedFormat(format!("{format:?}")));
    }
    let decoded = image::load_from_memory_with_format(bytes, format).map_err(|e| match e {
        CodecError::Unsupported(u) => ImageError::UnsupportedFormat(u.to_string()),
        other => ImageError::CorruptData(other.to_string()),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let color = decoded.color();
    if color.has_color() {
        let rgb = decoded.into_rgb8();
        Image::from_u8(h, w, 3, rgb.as_raw())
    } else {
        let gray = decoded.into_luma8();
        Image::from_u8(h, w, 1, gray.as_raw())
    }
}

/// Writes the image as an 8-bit PNG.
pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let bytes = img.to_u8();
    let (w, h) = (img.width as u32, img.height as u32);
    let dynamic = if img.channels == 3 {
        let buf: RgbImage = ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, bytes)
            .ok_or_else(|| ImageError::Invalid("buffer size".into()))?;
        DynamicImage::ImageRgb8(buf)
    } else {
        let buf: GrayImage = ImageBuffer::<Luma<u8>, _>::from_raw(w, h, bytes)
            .ok_or_else(|| ImageError::Invalid("buffer size".into()))?;
        DynamicImage::ImageLuma8(buf)
    };
    dynamic
        .save_with_format(path.as_ref(), image::ImageFormat::Png)
        .map_err(|e| match e {
            CodecError::IoError(io) => ImageError::Io(io),
            other => ImageError::Invalid(other.to_string()),
        })
}

/// Corner-aligned bilinear resize: source corners land exactly on destination
/// corners. Output samples are clamped to `[0, 1]`.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image, ImageError> {
    if out_h == 0 || out_w == 0 {
        return Err(ImageError::Invalid(format!("target size {out_h}x{out_w}")));
    }
    if out_h == img.height && out_w == img.width {
        return Ok(img.clone());
    }
    let c = img.channels;
    let rows = axis_weights(img.height, out_h);
    let cols = axis_weights(img.width, out_w);
    let mut data = vec![0.0f32; out_h * out_w * c];
    for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
            for ch in 0..c {
                let top = img.get(y0, x0, ch) * (1.0 - fx) + img.get(y0, x1, ch) * fx;
                let bottom = img.get(y1, x0, ch) * (1.0 - fx) + img.get(y1, x1, ch) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data[(oy * out_w + ox) * c + ch] = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(Image { height: out_h, width: out_w, channels: c, data })
}

fn axis_weights(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    (0..dst)
        .map(|o| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = o as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, (pos - i0 as f64) as f32)
        })
        .collect()
}

/// Mirror index into `[0, n)` without repeating the edge sample
/// (`-1 -> 1`, `n -> n - 2`).
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - k;
    }
    k as usize
}

pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// ITU-R BT.601 luma. Single-channel input is returned unchanged.
pub fn to_luma(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| (LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2]).clamp(0.0, 1.0))
        .collect();
    Image { height: img.height, width: img.width, channels: 1, data }
}
