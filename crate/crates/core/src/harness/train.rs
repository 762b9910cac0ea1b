use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Tensor};
use crate::degrade::{augment, DegradationConfig};
use crate::image::{load_image, Image};
use crate::models::{
    choose_patches, classifier_input, patch_tensor, prepare_image, Detector, DetectorSpec, FrontSpec, PipelineConfig,
    Session, FRONT_PREFIX, SSP_PREFIX,
};
use crate::patch::Patch;
use crate::rng::{derive_seed, permutation, rng};

use super::checkpoint::CheckpointMeta;
use super::manifest::{Label, Sample};
use super::HarnessError;

const ORDER_STREAM: u64 = 0x0de;
const CROP_STREAM: u64 = 0xc20;
const AUG_STREAM: u64 = 0xa06;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SspTrainConfig {
    pub pipeline: PipelineConfig,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub augment: DegradationConfig,
    pub seed: u64,
}

impl Default for SspTrainConfig {
    fn default() -> Self {
        SspTrainConfig {
            pipeline: PipelineConfig::default(),
            epochs: 5,
            batch: 64,
            lr: 1e-4,
            augment: DegradationConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EsspTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Degradations applied to clean patches to make (input, label) pairs.
    pub augment: DegradationConfig,
    pub use_perception: bool,
    pub seed: u64,
}

impl Default for EsspTrainConfig {
    fn default() -> Self {
        EsspTrainConfig {
            epochs: 20,
            batch: 16,
            lr: 1e-3,
            augment: DegradationConfig { probability: 1.0 / 3.0, ..DegradationConfig::default() },
            use_perception: true,
            seed: 0,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Sample-weighted mean of the optimized loss.
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reconstruction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perception: Option<f64>,
    pub wall_seconds: f64,
}

fn check_batch(batch: usize, epochs: usize, lr: f64) -> Result<(), HarnessError> {
    if batch == 0 || epochs == 0 || !(lr > 0.0 && lr.is_finite()) {
        return Err(HarnessError::Config(format!("need batch >= 1, epochs >= 1, lr > 0 (got {batch}, {epochs}, {lr})")));
    }
    Ok(())
}

fn load_prepared(samples: &[Sample], size: usize) -> Result<Vec<Image>, HarnessError> {
    samples.iter().map(|s| Ok(prepare_image(&load_image(&s.path)?, size)?)).collect()
}

/// Patches for sample `i` in `epoch`, each degraded by one independent
/// augmentation draw. Returns (clean, degraded, labels).
fn epoch_patches(
    img: &Image,
    pipeline: &PipelineConfig,
    aug: &DegradationConfig,
    seed: u64,
    epoch: usize,
    i: usize,
) -> Result<(Vec<Patch>, Vec<Patch>, Vec<[f32; 3]>), HarnessError> {
    let (e, i) = (epoch as u64, i as u64);
    let clean = choose_patches(img, pipeline, derive_seed(seed, &[CROP_STREAM, e, i]))?;
    let mut r = rng(derive_seed(seed, &[AUG_STREAM, aug.seed, e, i]));
    let mut degraded = Vec::with_capacity(clean.len());
    let mut labels = Vec::with_capacity(clean.len());
    for p in &clean {
        let (q, label) = augment(p, aug, &mut r)?;
        degraded.push(q);
        labels.push(label.one_hot());
    }
    Ok((clean, degraded, labels))
}

fn config_json<T: Serialize>(cfg: &T) -> String {
    serde_json::to_string(cfg).expect("config serializes")
}

/// Trains the classifier with binary cross-entropy against real = 1.
/// Epoch order and every crop and augmentation draw are functions of
/// `(seed, epoch, sample index)`.
pub fn train_ssp(
    train: &[Sample],
    cfg: &SspTrainConfig,
    mut log: impl FnMut(&EpochLog),
) -> Result<(Detector, CheckpointMeta), HarnessError> {
    check_batch(cfg.batch, cfg.epochs, cfg.lr)?;
    cfg.augment.validate().map_err(HarnessError::Config)?;
    if train.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    if !(train.iter().any(|s| s.label == Label::Real) && train.iter().any(|s| s.label == Label::Fake)) {
        return Err(HarnessError::SingleClassDataset);
    }
    let spec = DetectorSpec { pipeline: cfg.pipeline.clone(), front: None };
    let mut det = Detector::new(&spec, cfg.seed)?;
    let images = load_prepared(train, cfg.pipeline.image_size)?;
    let mut opt = Adam::new(det.store.trainable_with_prefix(SSP_PREFIX), &det.store, cfg.lr);

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let order = permutation(&mut rng(derive_seed(cfg.seed, &[ORDER_STREAM, epoch as u64])), train.len());
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let mut inputs = Vec::new();
            let mut targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (_, degraded, _) = epoch_patches(&images[i], &cfg.pipeline, &cfg.augment, cfg.seed, epoch, i)?;
                inputs.extend(classifier_input(&degraded, &cfg.pipeline)?);
                targets.push(if train[i].label == Label::Real { 1.0 } else { 0.0 });
            }
            let (grads, updates, loss) = {
                let mut s = Session::new(&det.store, true);
                let p = det.classify(&mut s, inputs, chunk.len())?;
                let loss = s.tape.bce_loss(p, &targets)?;
                let grads = s.tape.backward(loss)?;
                (grads, s.take_bn_updates(), s.tape.value(loss).data()[0])
            };
            det.store.accumulate(&grads);
            opt.step(&mut det.store)?;
            det.store.apply_updates(updates);
            total += f64::from(loss) * chunk.len() as f64;
        }
        log(&EpochLog {
            epoch,
            loss: total / train.len() as f64,
            reconstruction: None,
            perception: None,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    let meta = CheckpointMeta { seed: cfg.seed, epoch: cfg.epochs as u64, config: config_json(cfg), spec: String::new() };
    Ok((det, meta))
}

/// Trains a fresh enhancement front end on top of a trained classifier,
/// which stays frozen: the loss `mse(x', x̂) + mse(w', ŵ)` does not involve
/// it. Without perception only the reconstruction term is optimized.
pub fn train_essp(
    train: &[Sample],
    ssp: &Detector,
    cfg: &EsspTrainConfig,
    mut log: impl FnMut(&EpochLog),
) -> Result<(Detector, CheckpointMeta), HarnessError> {
    check_batch(cfg.batch, cfg.epochs, cfg.lr)?;
    cfg.augment.validate().map_err(HarnessError::Config)?;
    if train.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    if !(train.iter().any(|s| s.label == Label::Real) && train.iter().any(|s| s.label == Label::Fake)) {
        return Err(HarnessError::SingleClassDataset);
    }
    let mut det = ssp.clone();
    det.attach_front(FrontSpec { use_perception: cfg.use_perception }, cfg.seed);
    let pipeline = det.config.clone();
    let images = load_prepared(train, pipeline.image_size)?;
    let mut ids = det.store.trainable_with_prefix(FRONT_PREFIX);
    if !cfg.use_perception {
        let unused = det.store.trainable_with_prefix("essp.perception.");
        ids.retain(|id| !unused.contains(id));
    }
    let mut opt = Adam::new(ids, &det.store, cfg.lr);

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let order = permutation(&mut rng(derive_seed(cfg.seed, &[ORDER_STREAM, epoch as u64])), train.len());
        let (mut sum_rec, mut sum_per, mut count) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch) {
            let (mut clean, mut degraded, mut labels) = (Vec::new(), Vec::new(), Vec::new());
            for &i in chunk {
                let (c, d, l) = epoch_patches(&images[i], &pipeline, &cfg.augment, cfg.seed, epoch, i)?;
                clean.extend(c);
                degraded.extend(d);
                labels.extend(l.into_iter().flatten());
            }
            let n = clean.len();
            let (grads, updates, rec, per) = {
                let front = det.front()?;
                let mut s = Session::new(&det.store, true).with_frozen(SSP_PREFIX);
                let x = s.input(patch_tensor(&degraded)?);
                let target = s.input(patch_tensor(&clean)?);
                let pass = front.forward(&mut s, x)?;
                let rec = s.tape.mse_loss(pass.enhanced, target)?;
                let (loss, per) = match pass.w_prime {
                    Some(w) => {
                        let truth = s.input(Tensor::new(vec![n, 3], labels)?);
                        let per = s.tape.mse_loss(w, truth)?;
                        (s.tape.add(rec, per)?, Some(per))
                    }
                    None => (rec, None),
                };
                let grads = s.tape.backward(loss)?;
                let per = per.map(|p| f64::from(s.tape.value(p).data()[0]));
                (grads, s.take_bn_updates(), f64::from(s.tape.value(rec).data()[0]), per)
            };
            det.store.accumulate(&grads);
            opt.step(&mut det.store)?;
            det.store.apply_updates(updates);
            sum_rec += rec * n as f64;
            sum_per += per.unwrap_or(0.0) * n as f64;
            count += n;
        }
        let reconstruction = sum_rec / count as f64;
        let perception = cfg.use_perception.then(|| sum_per / count as f64);
        log(&EpochLog {
            epoch,
            loss: reconstruction + perception.unwrap_or(0.0),
            reconstruction: Some(reconstruction),
            perception,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    let meta = CheckpointMeta { seed: cfg.seed, epoch: cfg.epochs as u64, config: config_json(cfg), spec: String::new() };
    Ok((det, meta))
}
