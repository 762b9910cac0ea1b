//! Desk-scale stand-in corpus. Real and fake images of a pair share one
//! smooth random scene; real ones carry i.i.d. Gaussian sensor noise and a
//! per-image gain, fake ones only a Gaussian-smoothed (suppressed) noise
//! field.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::degrade::gaussian_blur;
use crate::image::{save_png, Image};
use crate::rng::{derive_seed, normal, rng, unit_f64, Rng};

use super::manifest::{write_manifest, Label, Sample, Split};
use super::HarnessError;

pub const DEFAULT_NOISE_SIGMA: f64 = 2.0 / 255.0;
pub const GENERATOR_TAG: &str = "synthetic";
pub const MANIFEST_NAME: &str = "manifest.jsonl";
/// Smoothing applied to the fake images' noise field, in pixels.
const FAKE_NOISE_SMOOTHING: f32 = 1.5;
const GAIN_RANGE: (f64, f64) = (0.9, 1.1);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub seed: u64,
    pub size: usize,
    /// Sensor noise standard deviation in intensity units.
    pub noise_sigma: f64,
    pub train_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { n_per_class: 200, seed: 0, size: 256, noise_sigma: DEFAULT_NOISE_SIGMA, train_fraction: 0.8 }
    }
}

fn between(r: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit_f64(r)
}

/// Linear gradient plus two low-frequency cosines, tinted per channel and
/// kept away from the clipping range.
fn scene(r: &mut Rng, size: usize) -> Vec<f64> {
    let offset = between(r, 0.3, 0.7);
    let (gx, gy) = (between(r, -0.25, 0.25), between(r, -0.25, 0.25));
    let waves: Vec<(f64, f64, f64, f64)> =
        (0..2).map(|_| (between(r, 0.02, 0.08), between(r, 0.5, 2.0), between(r, 0.5, 2.0), between(r, 0.0, 2.0 * PI))).collect();
    let tint: Vec<(f64, f64)> = (0..3).map(|_| (between(r, 0.8, 1.2), between(r, -0.05, 0.05))).collect();
    let s = size as f64;
    let mut out = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / s, y as f64 / s);
            let mut l = offset + gx * (u - 0.5) + gy * (v - 0.5);
            for &(a, fx, fy, ph) in &waves {
                l += a * (2.0 * PI * (fx * u + fy * v) + ph).cos();
            }
            for &(gain, shift) in &tint {
                out.push((l * gain + shift).clamp(0.1, 0.9));
            }
        }
    }
    out
}

fn real_image(base: &[f64], size: usize, sigma: f64, r: &mut Rng) -> Result<Image, HarnessError> {
    let gain = between(r, GAIN_RANGE.0, GAIN_RANGE.1);
    let data = base.iter().map(|&b| (gain * (b + sigma * normal(r))) as f32).collect();
    Ok(Image::from_clamped(size, size, 3, data)?)
}

fn fake_image(base: &[f64], size: usize, sigma: f64, r: &mut Rng) -> Result<Image, HarnessError> {
    let field: Vec<f32> = (0..base.len()).map(|_| (0.5 + sigma * normal(r)) as f32).collect();
    let smooth = gaussian_blur(&Image::from_clamped(size, size, 3, field)?, FAKE_NOISE_SMOOTHING);
    let data = base.iter().zip(smooth.data()).map(|(&b, &n)| (b + f64::from(n) - 0.5) as f32).collect();
    Ok(Image::from_clamped(size, size, 3, data)?)
}

/// Writes `2 * n_per_class` PNGs under `out_dir/{real,fake}/` plus
/// `out_dir/manifest.jsonl`. The first `round(train_fraction * n)` pairs
/// form the training split.
pub fn make_synthetic_corpus(out_dir: impl AsRef<Path>, cfg: &SynthConfig) -> Result<Vec<Sample>, HarnessError> {
    let out_dir = out_dir.as_ref();
    if cfg.n_per_class == 0 || cfg.size < 2 || !(0.0..=1.0).contains(&cfg.train_fraction) || cfg.noise_sigma < 0.0 {
        return Err(HarnessError::Config(format!("invalid synthetic corpus settings {cfg:?}")));
    }
    for dir in ["real", "fake"] {
        let d = out_dir.join(dir);
        fs::create_dir_all(&d).map_err(|e| HarnessError::io(&d, e))?;
    }
    let n_train = (cfg.train_fraction * cfg.n_per_class as f64).round() as usize;
    let mut samples = Vec::with_capacity(2 * cfg.n_per_class);
    for i in 0..cfg.n_per_class {
        let base = scene(&mut rng(derive_seed(cfg.seed, &[i as u64, 0])), cfg.size);
        let split = if i < n_train { Split::Train } else { Split::Test };
        for (label, dir, stream) in [(Label::Real, "real", 1), (Label::Fake, "fake", 2)] {
            let mut r = rng(derive_seed(cfg.seed, &[i as u64, stream]));
            let img = match label {
                Label::Real => real_image(&base, cfg.size, cfg.noise_sigma, &mut r)?,
                Label::Fake => fake_image(&base, cfg.size, cfg.noise_sigma, &mut r)?,
            };
            let path = out_dir.join(dir).join(format!("{i:05}.png"));
            save_png(&img, &path)?;
            samples.push(Sample { path, label, generator: GENERATOR_TAG.to_string(), split });
        }
    }
    write_manifest(out_dir.join(MANIFEST_NAME), &samples, out_dir)?;
    Ok(samples)
}
