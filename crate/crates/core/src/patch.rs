//! Candidate patch cropping and texture-diversity ranking.
//!
//! The diversity score of a patch is the sum, over every channel, of the
//! absolute differences between neighbouring samples along four directions:
//! left-right, up-down, diagonal and anti-diagonal. Scores are accumulated in
//! `f64`; for samples on the 8-bit grid every partial sum is exactly
//! representable, so the result does not depend on summation order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{resize_bilinear, to_luma, Image, ImageError};
use crate::rng::{rng, uniform_index};

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("patch size {size} exceeds image {height}x{width}")]
    PatchTooLarge { size: usize, height: usize, width: usize },
    #[error("invalid patch request: {0}")]
    Invalid(String),
    #[error("no candidate patches")]
    EmptyInput,
    #[error("requested {k} patches but only {available} are available")]
    KTooLarge { k: usize, available: usize },
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// A square crop of a source image.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pixels: Image,
    pub origin_row: usize,
    pub origin_col: usize,
    pub source_id: u64,
}

impl Patch {
    pub fn new(pixels: Image, origin_row: usize, origin_col: usize, source_id: u64) -> Result<Self, PatchError> {
        if pixels.height() != pixels.width() || pixels.height() < 2 {
            return Err(PatchError::Invalid(format!(
                "patch must be square with side >= 2, got {}x{}",
                pixels.height(),
                pixels.width()
            )));
        }
        Ok(Patch { pixels, origin_row, origin_col, source_id })
    }

    pub fn size(&self) -> usize {
        self.pixels.height()
    }

    pub fn channels(&self) -> usize {
        self.pixels.channels()
    }

    pub fn pixels(&self) -> &Image {
        &self.pixels
    }

    pub fn into_pixels(self) -> Image {
        self.pixels
    }

    /// Same placement, new content (e.g. after degradation or enhancement).
    pub fn with_pixels(&self, pixels: Image) -> Result<Patch, PatchError> {
        Patch::new(pixels, self.origin_row, self.origin_col, self.source_id)
    }
}

/// Nonnegative texture-diversity score.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct DiversityScore(pub f64);

impl DiversityScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    #[default]
    Simplest,
    MostComplex,
}

/// Which samples the diversity score is computed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DiversityChannels {
    /// Sum of per-channel scores.
    #[default]
    PerChannel,
    /// Score of the BT.601 luma plane only.
    Luma,
}

/// Draws `count` square crops of side `m` at uniformly random origins.
///
/// For each crop the row origin is drawn first, then the column origin, each
/// with [`uniform_index`] over the valid positions. Crops may overlap.
pub fn crop_patches(img: &Image, m: usize, count: usize, seed: u64) -> Result<Vec<Patch>, PatchError> {
    if m > img.height() || m > img.width() {
        return Err(PatchError::PatchTooLarge { size: m, height: img.height(), width: img.width() });
    }
    if m < 2 {
        return Err(PatchError::Invalid(format!("patch size {m} < 2")));
    }
    if count == 0 {
        return Err(PatchError::Invalid("count must be at least 1".into()));
    }
    let mut r = rng(seed);
    let rows = img.height() - m + 1;
    let cols = img.width() - m + 1;
    (0..count)
        .map(|_| {
            let row = uniform_index(&mut r, rows);
            let col = uniform_index(&mut r, cols);
            Patch::new(img.crop(row, col, m, m)?, row, col, seed)
        })
        .collect()
}

/// Diversity of a raw interleaved `m × m × channels` buffer. Values need not
/// lie in `[0, 1]`.
pub fn diversity_of(values: &[f32], m: usize, channels: usize) -> f64 {
    assert_eq!(values.len(), m * m * channels, "buffer is not m*m*channels");
    let at = |i: usize, j: usize, c: usize| values[(i * m + j) * channels + c] as f64;
    let mut total = 0.0f64;
    for c in 0..channels {
        for i in 0..m {
            for j in 0..m {
                let x = at(i, j, c);
                if j + 1 < m {
                    total += (x - at(i, j + 1, c)).abs();
                }
                if i + 1 < m {
                    total += (x - at(i + 1, j, c)).abs();
                    if j + 1 < m {
                        total += (x - at(i + 1, j + 1, c)).abs();
                        total += (at(i + 1, j, c) - at(i, j + 1, c)).abs();
                    }
                }
            }
        }
    }
    total
}

pub fn texture_diversity(p: &Patch) -> DiversityScore {
    DiversityScore(diversity_of(p.pixels.data(), p.size(), p.channels()))
}

pub fn texture_diversity_with(p: &Patch, channels: DiversityChannels) -> DiversityScore {
    match channels {
        DiversityChannels::PerChannel => texture_diversity(p),
        DiversityChannels::Luma => {
            let luma = to_luma(&p.pixels);
            DiversityScore(diversity_of(luma.data(), p.size(), 1))
        }
    }
}

/// Index of the argmin (or argmax) score; ties go to the lowest index.
fn pick(scores: &[f64], mode: SelectMode) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        let better = match mode {
            SelectMode::Simplest => s < scores[best],
            SelectMode::MostComplex => s > scores[best],
        };
        if better {
            best = i;
        }
    }
    best
}

pub fn select_patch(patches: &[Patch], mode: SelectMode) -> Result<Patch, PatchError> {
    select_patch_with(patches, mode, DiversityChannels::PerChannel)
}

pub fn select_patch_with(
    patches: &[Patch],
    mode: SelectMode,
    channels: DiversityChannels,
) -> Result<Patch, PatchError> {
    if patches.is_empty() {
        return Err(PatchError::EmptyInput);
    }
    let scores: Vec<f64> = patches.iter().map(|p| texture_diversity_with(p, channels).0).collect();
    Ok(patches[pick(&scores, mode)].clone())
}

/// The `k` lowest-diversity patches, ascending by score.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchStack {
    patches: Vec<Patch>,
}

impl PatchStack {
    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn size(&self) -> usize {
        self.patches[0].size()
    }

    /// Total channel count, `k * C`.
    pub fn channels(&self) -> usize {
        self.patches.iter().map(Patch::channels).sum()
    }

    /// Interleaved `M × M × kC` samples: member patches concatenated along the
    /// channel axis in rank order.
    pub fn data(&self) -> Vec<f32> {
        let m = self.size();
        let mut out = Vec::with_capacity(m * m * self.channels());
        for px in 0..m * m {
            for p in &self.patches {
                let c = p.channels();
                out.extend_from_slice(&p.pixels.data()[px * c..(px + 1) * c]);
            }
        }
        out
    }
}

pub fn select_top_k(patches: &[Patch], k: usize) -> Result<PatchStack, PatchError> {
    Ok(PatchStack { patches: select_ranked(patches, SelectMode::Simplest, k)? })
}

/// The `k` first patches in diversity order: ascending for
/// [`SelectMode::Simplest`], descending for [`SelectMode::MostComplex`]. Equal
/// scores keep crop order.
pub fn select_ranked(patches: &[Patch], mode: SelectMode, k: usize) -> Result<Vec<Patch>, PatchError> {
    if patches.is_empty() || k == 0 {
        return Err(PatchError::EmptyInput);
    }
    if k > patches.len() {
        return Err(PatchError::KTooLarge { k, available: patches.len() });
    }
    let (m, c) = (patches[0].size(), patches[0].channels());
    if patches.iter().any(|p| p.size() != m || p.channels() != c) {
        return Err(PatchError::Invalid("patches differ in size or channel count".into()));
    }
    let scores: Vec<f64> = patches.iter().map(|p| texture_diversity(p).0).collect();
    let mut order: Vec<usize> = (0..patches.len()).collect();
    match mode {
        SelectMode::Simplest => order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b])),
        SelectMode::MostComplex => order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a])),
    }
    Ok(order[..k].iter().map(|&i| patches[i].clone()).collect())
}

/// Resizes a patch to the given size with the corner-aligned bilinear kernel.
pub fn upsample_patch(p: &Patch, out_h: usize, out_w: usize) -> Result<Image, PatchError> {
    Ok(resize_bilinear(&p.pixels, out_h, out_w)?)
}
