use serde::{Deserialize, Serialize};

use crate::degrade::{augment, Degradation, DegradationConfig};
use crate::image::load_image;
use crate::models::{choose_patches, prepare_image, Detector, ScoreMode};
use crate::rng::{derive_seed, rng};

use super::manifest::Sample;
use super::metrics::{compute_metrics, Metrics};
use super::HarnessError;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutput {
    pub metrics: Metrics,
    /// Probability of real per sample, in input order.
    pub scores: Vec<f64>,
}

/// Scores every sample, optionally degrading the whole image first.
pub fn evaluate(
    det: &Detector,
    samples: &[Sample],
    mode: ScoreMode,
    degradation: Option<Degradation>,
) -> Result<EvalOutput, HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let mut scores = Vec::with_capacity(samples.len());
    for s in samples {
        let mut img = load_image(&s.path)?;
        if let Some(d) = degradation {
            img = d.apply(&img);
        }
        scores.push(f64::from(det.score(&img, mode)?));
    }
    let labels: Vec<_> = samples.iter().map(|s| s.label).collect();
    let generators: Vec<_> = samples.iter().map(|s| s.generator.clone()).collect();
    Ok(EvalOutput { metrics: compute_metrics(&scores, &labels, &generators), scores })
}

const PROBE_STREAM: u64 = 0xe7a;

/// Front-end behaviour on augmented held-out patches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontReport {
    pub patches: usize,
    /// Fraction with `argmax(w')` equal to the augmentation label; absent
    /// without perception.
    pub perception_accuracy: Option<f64>,
    /// Rows are true labels, columns predictions, in blurry, compressed,
    /// intact order.
    pub confusion: [[usize; 3]; 3],
    /// Mean squared error of the degraded input against the clean patch.
    pub input_mse: f64,
    /// Mean squared error of the restored patch against the clean patch.
    pub restored_mse: f64,
}

/// Degrades the selected patches of every sample with `augment` and runs the
/// front end on them. Crops and degradations are functions of `(seed, index)`.
pub fn probe_front(
    det: &Detector,
    samples: &[Sample],
    aug: &DegradationConfig,
    seed: u64,
) -> Result<FrontReport, HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    aug.validate().map_err(HarnessError::Config)?;
    let front = det.front()?;
    let mut confusion = [[0usize; 3]; 3];
    let (mut patches, mut sse_in, mut sse_out, mut values) = (0usize, 0.0f64, 0.0f64, 0usize);
    for (i, s) in samples.iter().enumerate() {
        let prepared = prepare_image(&load_image(&s.path)?, det.config.image_size)?;
        let clean = choose_patches(&prepared, &det.config, derive_seed(seed, &[PROBE_STREAM, i as u64]))?;
        let mut r = rng(derive_seed(seed, &[PROBE_STREAM, aug.seed, i as u64, 1]));
        let mut degraded = Vec::with_capacity(clean.len());
        let mut labels = Vec::with_capacity(clean.len());
        for p in &clean {
            let (q, label) = augment(p, aug, &mut r)?;
            degraded.push(q);
            labels.push(label.index());
        }
        let (restored, w) = det.enhance(&degraded)?;
        for ((c, d), e) in clean.iter().zip(&degraded).zip(&restored) {
            sse_in += sq_err(c.pixels().data(), d.pixels().data());
            sse_out += sq_err(c.pixels().data(), e.pixels().data());
            values += c.pixels().data().len();
        }
        if let Some(w) = w {
            for (t, w) in labels.iter().zip(&w) {
                confusion[*t][argmax(w)] += 1;
            }
        }
        patches += clean.len();
    }
    let correct: usize = (0..3).map(|k| confusion[k][k]).sum();
    Ok(FrontReport {
        patches,
        perception_accuracy: front.use_perception.then(|| correct as f64 / patches as f64),
        confusion,
        input_mse: sse_in / values as f64,
        restored_mse: sse_out / values as f64,
    })
}

fn argmax(v: &[f32; 3]) -> usize {
    // first maximum wins
    (1..3).fold(0, |best, k| if v[k] > v[best] { k } else { best })
}

fn sq_err(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2)).sum()
}
