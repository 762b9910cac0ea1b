//! Fixed high-pass residual filters (the three-kernel SRM subset).
//!
//! Color inputs are reduced to luma first; each kernel is then
//! cross-correlated with the luma plane and divided by its normalization
//! divisor. Borders are mirrored (reflect-101) so the output keeps the input
//! size and constant images give an exactly zero response everywhere.
//! Residuals are left raw: no quantization and no truncation.

use crate::image::{reflect, to_luma, Image, ImageError};

/// A 5×5 integer stencil and the divisor applied to its response.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SrmKernel {
    pub name: &'static str,
    pub taps: [[i32; 5]; 5],
    pub divisor: f32,
}

impl SrmKernel {
    /// Normalized coefficient at `(row, col)` of the 5×5 grid.
    pub fn weight(&self, row: usize, col: usize) -> f32 {
        self.taps[row][col] as f32 / self.divisor
    }
}

/// Second-order "square" predictor (3×3 support), divisor 4.
pub const SQUARE_3X3: SrmKernel = SrmKernel {
    name: "square3x3",
    taps: [
        [0, 0, 0, 0, 0],
        [0, -1, 2, -1, 0],
        [0, 2, -4, 2, 0],
        [0, -1, 2, -1, 0],
        [0, 0, 0, 0, 0],
    ],
    divisor: 4.0,
};

/// Third-order 5×5 "square" predictor, divisor 12.
pub const SQUARE_5X5: SrmKernel = SrmKernel {
    name: "square5x5",
    taps: [
        [-1, 2, -2, 2, -1],
        [2, -6, 8, -6, 2],
        [-2, 8, -12, 8, -2],
        [2, -6, 8, -6, 2],
        [-1, 2, -2, 2, -1],
    ],
    divisor: 12.0,
};

/// Horizontal second-order difference, divisor 2.
pub const HORIZONTAL_2ND: SrmKernel = SrmKernel {
    name: "horizontal2",
    taps: [
        [0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0],
        [0, 1, -2, 1, 0],
        [0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0],
    ],
    divisor: 2.0,
};

/// The immutable bank of three kernels, in output-channel order.
#[derive(Clone, Debug)]
pub struct SrmKernelBank {
    kernels: [SrmKernel; 3],
}

impl Default for SrmKernelBank {
    fn default() -> Self {
        SrmKernelBank { kernels: [SQUARE_3X3, SQUARE_5X5, HORIZONTAL_2ND] }
    }
}

impl SrmKernelBank {
    pub fn kernels(&self) -> &[SrmKernel; 3] {
        &self.kernels
    }
}

/// Three signed residual planes, stored channel-major (`3 × H × W`).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseFingerprint {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl NoiseFingerprint {
    pub const CHANNELS: usize = 3;

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Channel-major samples.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, k: usize) -> &[f32] {
        let hw = self.height * self.width;
        &self.data[k * hw..(k + 1) * hw]
    }

    /// Maps a residual plane to a viewable gray image:
    /// `0.5 + r / (2 * max|r|)`, or flat 0.5 for an all-zero plane.
    pub fn plane_as_image(&self, k: usize) -> Result<Image, ImageError> {
        let plane = self.plane(k);
        let peak = plane.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let data = if peak > 0.0 {
            plane.iter().map(|r| 0.5 + r / (2.0 * peak)).collect()
        } else {
            vec![0.5; plane.len()]
        };
        Image::from_clamped(self.height, self.width, 1, data)
    }
}

/// Extracts the noise fingerprint of an image with the default bank.
pub fn extract_fingerprint(img: &Image) -> NoiseFingerprint {
    extract_with(&SrmKernelBank::default(), img)
}

pub fn extract_with(bank: &SrmKernelBank, img: &Image) -> NoiseFingerprint {
    let luma = to_luma(img);
    let (h, w) = (luma.height(), luma.width());
    let src = luma.data();
    let mut data = Vec::with_capacity(3 * h * w);
    for kernel in bank.kernels() {
        data.extend(filter_plane(src, h, w, kernel));
    }
    NoiseFingerprint { height: h, width: w, data }
}

/// Cross-correlation over the nonzero taps with mirrored borders.
fn filter_plane(src: &[f32], h: usize, w: usize, kernel: &SrmKernel) -> Vec<f32> {
    let taps: Vec<(isize, isize, f64)> = (0..5)
        .flat_map(|r| (0..5).map(move |c| (r, c)))
        .filter(|&(r, c)| kernel.taps[r][c] != 0)
        .map(|(r, c)| (r as isize - 2, c as isize - 2, kernel.taps[r][c] as f64))
        .collect();
    let divisor = kernel.divisor as f64;
    let mut out = vec![0.0f32; h * w];
    let (hi, wi) = (h as isize, w as isize);
    for i in 0..hi {
        let interior_row = i >= 2 && i + 2 < hi;
        for j in 0..wi {
            // f64 keeps integer-tap sums exact, so constants cancel to 0
            let mut acc = 0.0f64;
            if interior_row && j >= 2 && j + 2 < wi {
                for &(dy, dx, t) in &taps {
                    acc += t * src[((i + dy) * wi + j + dx) as usize] as f64;
                }
            } else {
                for &(dy, dx, t) in &taps {
                    acc += t * src[reflect(i + dy, h) * w + reflect(j + dx, w)] as f64;
                }
            }
            out[(i * wi + j) as usize] = (acc / divisor) as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_are_high_pass() {
        for k in SrmKernelBank::default().kernels() {
            let sum: i32 = k.taps.iter().flatten().sum();
            assert_eq!(sum, 0, "{}", k.name);
        }
    }

    #[test]
    fn constant_image_gives_zero_everywhere() {
        for v in [0.0, 0.6, 1.0] {
            let fp = extract_fingerprint(&Image::filled(12, 9, 3, v).unwrap());
            assert!(fp.data().iter().all(|&r| r == 0.0));
        }
        // tiny images exercise repeated mirroring
        let fp = extract_fingerprint(&Image::filled(1, 2, 1, 0.3).unwrap());
        assert!(fp.data().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn reflect_indices() {
        use crate::image::reflect;
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(3, 1), 0);
        assert_eq!(reflect(-2, 2), 0);
        assert_eq!(reflect(2, 2), 0);
    }

    #[test]
    fn ramp_has_zero_second_difference() {
        let (h, w) = (6, 10);
        let data: Vec<f32> = (0..h * w).map(|i| (i % w) as f32 * 0.05).collect();
        let fp = extract_fingerprint(&Image::new(h, w, 1, data).unwrap());
        let p = fp.plane(2);
        for i in 0..h {
            for j in 1..w - 1 {
                assert!(p[i * w + j].abs() < 1e-6, "({i},{j}) = {}", p[i * w + j]);
            }
        }
    }

    #[test]
    fn plane_visualization_is_centered() {
        let mut data = vec![0.0f32; 49];
        data[24] = 1.0;
        let fp = extract_fingerprint(&Image::new(7, 7, 1, data).unwrap());
        let vis = fp.plane_as_image(0).unwrap();
        assert_eq!(vis.get(0, 0, 0), 0.5);
        // center tap is -4/4 = -1, the extreme, so it maps to 0
        assert!(vis.get(3, 3, 0).abs() < 1e-6);
    }
}
