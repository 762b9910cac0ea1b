//! Simulated real-world degradations: Gaussian blur and a JPEG-style
//! quantization round trip.
//!
//! The codec reproduces JPEG's signal damage without its entropy coder:
//! RGB → YCbCr (no chroma subsampling), 8×8 DCT-II per plane, quantization
//! with the standard luminance table scaled by the libjpeg quality rule,
//! dequantization, inverse DCT and conversion back. Like a real decoder the
//! result is rounded to 8-bit levels.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::image::{reflect, Image};
use crate::patch::{Patch, PatchError};
use crate::rng::{uniform_index, unit_f64, Rng};

/// One-hot degradation target `[blurry, compressed, intact]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DegradationLabel {
    Blurry,
    Compressed,
    Intact,
}

impl DegradationLabel {
    pub const ALL: [DegradationLabel; 3] = [Self::Blurry, Self::Compressed, Self::Intact];

    pub fn index(self) -> usize {
        match self {
            Self::Blurry => 0,
            Self::Compressed => 1,
            Self::Intact => 2,
        }
    }

    pub fn one_hot(self) -> [f32; 3] {
        let mut w = [0.0; 3];
        w[self.index()] = 1.0;
        w
    }
}

/// Augmentation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationConfig {
    /// Chance of each degradation; the two are mutually exclusive.
    pub probability: f64,
    /// Blur standard deviation range in pixels.
    pub sigma_range: (f32, f32),
    /// Inclusive JPEG quality range.
    pub qf_range: (u8, u8),
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        DegradationConfig { probability: 0.10, sigma_range: (0.0, 1.0), qf_range: (90, 100), seed: 0 }
    }
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(format!("probability {} outside [0, 1]", self.probability));
        }
        let (lo, hi) = self.sigma_range;
        if !(lo >= 0.0 && hi >= lo) {
            return Err(format!("bad sigma range [{lo}, {hi}]"));
        }
        let (qlo, qhi) = self.qf_range;
        if qlo < 1 || qhi > 100 || qhi < qlo {
            return Err(format!("bad quality range [{qlo}, {qhi}]"));
        }
        Ok(())
    }
}

/// A whole-image degradation applied before scoring.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Degradation {
    Blur { sigma: f32 },
    Jpeg { quality: u8 },
}

impl Degradation {
    pub fn apply(&self, img: &Image) -> Image {
        match *self {
            Degradation::Blur { sigma } => gaussian_blur(img, sigma),
            Degradation::Jpeg { quality } => jpeg_compress(img, quality),
        }
    }
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f64> {
    let s = sigma as f64;
    let r = (3.0 * s).ceil() as isize;
    let w: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * s * s)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with mirrored borders. `sigma == 0` is the identity.
pub fn gaussian_blur(img: &Image, sigma: f32) -> Image {
    assert!(sigma >= 0.0 && sigma.is_finite(), "sigma must be a nonnegative number");
    if sigma == 0.0 {
        return img.clone();
    }
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as isize;
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let src = img.data();
    let mut tmp = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, &k) in taps.iter().enumerate() {
                    let xx = reflect(x as isize + t as isize - r, w);
                    acc += k * src[(y * w + xx) * c + ch] as f64;
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, &k) in taps.iter().enumerate() {
                    let yy = reflect(y as isize + t as isize - r, h);
                    acc += k * tmp[(yy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc as f32;
            }
        }
    }
    Image::from_clamped(h, w, c, out).expect("dimensions preserved")
}

/// Standard JPEG luminance quantization table (quality 50), row-major.
pub const LUMA_QUANT: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Quantization table for a quality factor under the libjpeg scaling rule.
pub fn quant_table(quality: u8) -> [u16; 64] {
    let q = quality.clamp(1, 100) as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut t = [0u16; 64];
    for (o, &b) in t.iter_mut().zip(&LUMA_QUANT) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as u16;
    }
    t
}

/// `cos((2x + 1) u π / 16)` scaled by the orthonormal DCT factors.
fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let cu = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = cu * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        b
    })
}

fn quantize_block(block: &mut [f64; 64], table: &[u16; 64]) {
    let b = dct_basis();
    let mut tmp = [0.0f64; 64];
    // rows then columns
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| b[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut coef = [0.0f64; 64];
    for v in 0..8 {
        for u in 0..8 {
            coef[v * 8 + u] = (0..8).map(|y| b[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    for (c, &q) in coef.iter_mut().zip(table) {
        *c = (*c / q as f64).round() * q as f64;
    }
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|v| b[v][y] * coef[v * 8 + u]).sum();
        }
    }
    for y in 0..8 {
        for x in 0..8 {
            block[y * 8 + x] = (0..8).map(|u| b[u][x] * tmp[y * 8 + u]).sum();
        }
    }
}

/// Runs every 8×8 block of a level-shifted plane through quantization. The
/// plane is padded by edge replication to a multiple of 8.
fn process_plane(plane: &mut [f64], h: usize, w: usize, table: &[u16; 64]) {
    let mut block = [0.0f64; 64];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    let (yy, xx) = ((by + y).min(h - 1), (bx + x).min(w - 1));
                    block[y * 8 + x] = plane[yy * w + xx];
                }
            }
            quantize_block(&mut block, table);
            for y in 0..8 {
                for x in 0..8 {
                    if by + y < h && bx + x < w {
                        plane[(by + y) * w + bx + x] = block[y * 8 + x];
                    }
                }
            }
        }
    }
}

/// Lossy JPEG-style round trip at the given quality (1..=100).
pub fn jpeg_compress(img: &Image, quality: u8) -> Image {
    assert!((1..=100).contains(&quality), "quality must be in 1..=100");
    let table = quant_table(quality);
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let px = img.data();
    let n = h * w;
    let mut planes: Vec<Vec<f64>> = if c == 3 {
        let (mut y, mut cb, mut cr) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let (r, g, b) = (px[3 * i] as f64 * 255.0, px[3 * i + 1] as f64 * 255.0, px[3 * i + 2] as f64 * 255.0);
            y[i] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
            cb[i] = -0.168_736 * r - 0.331_264 * g + 0.5 * b;
            cr[i] = 0.5 * r - 0.418_688 * g - 0.081_312 * b;
        }
        vec![y, cb, cr]
    } else {
        vec![px.iter().map(|&v| v as f64 * 255.0 - 128.0).collect()]
    };
    for p in &mut planes {
        process_plane(p, h, w, &table);
    }
    let to_unit = |v: f64| (v.round().clamp(0.0, 255.0) / 255.0) as f32;
    let out: Vec<f32> = if c == 3 {
        (0..n)
            .flat_map(|i| {
                let (y, cb, cr) = (planes[0][i] + 128.0, planes[1][i], planes[2][i]);
                [
                    to_unit(y + 1.402 * cr),
                    to_unit(y - 0.344_136 * cb - 0.714_136 * cr),
                    to_unit(y + 1.772 * cb),
                ]
            })
            .collect()
    } else {
        planes[0].iter().map(|&v| to_unit(v + 128.0)).collect()
    };
    Image::new(h, w, c, out).expect("dimensions preserved")
}

/// Degrades a training patch. One uniform draw `u` picks the outcome:
/// `u < p` blurs (σ uniform in `sigma_range`), `p <= u < 2p` compresses
/// (integer quality uniform in `qf_range`), anything else leaves the patch
/// intact. Exactly one label is therefore ever set.
pub fn augment(patch: &Patch, cfg: &DegradationConfig, rng: &mut Rng) -> Result<(Patch, DegradationLabel), PatchError> {
    let p = cfg.probability;
    let u = unit_f64(rng);
    if u < p {
        let (lo, hi) = cfg.sigma_range;
        let sigma = lo + (hi - lo) * unit_f64(rng) as f32;
        Ok((patch.with_pixels(gaussian_blur(patch.pixels(), sigma))?, DegradationLabel::Blurry))
    } else if u < 2.0 * p {
        let (lo, hi) = cfg.qf_range;
        let quality = lo + uniform_index(rng, (hi - lo) as usize + 1) as u8;
        Ok((patch.with_pixels(jpeg_compress(patch.pixels(), quality))?, DegradationLabel::Compressed))
    } else {
        Ok((patch.clone(), DegradationLabel::Intact))
    }
}
