//! Datasets, training loops, evaluation metrics and on-disk formats.

mod checkpoint;
mod eval;
mod manifest;
mod metrics;
mod synth;
mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::image::ImageError;
use crate::patch::PatchError;
use crate::models::ModelError;

pub use checkpoint::{
    decode_checkpoint, detector_checkpoint, detector_from_checkpoint, encode_checkpoint, load_checkpoint, load_detector, save_checkpoint, save_detector, Checkpoint, CheckpointMeta, ParamEntry,
    CHECKPOINT_VERSION, MAGIC,
};
pub use eval::{evaluate, probe_front, EvalOutput, FrontReport};
pub use manifest::{load_manifest, write_manifest, Label, Sample, Split};
pub use metrics::{accuracy, average_precision, compute_metrics, Metrics, SubsetMetrics, THRESHOLD};
pub use synth::{make_synthetic_corpus, SynthConfig, DEFAULT_NOISE_SIGMA, GENERATOR_TAG, MANIFEST_NAME};
pub use train::{train_essp, train_ssp, EpochLog, EsspTrainConfig, SspTrainConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("training set must contain both real and fake samples")]
    SingleClassDataset,
    #[error("no samples")]
    EmptyDataset,
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

impl From<AutodiffError> for HarnessError {
    fn from(e: AutodiffError) -> Self {
        HarnessError::Model(e.into())
    }
}

impl From<PatchError> for HarnessError {
    fn from(e: PatchError) -> Self {
        HarnessError::Model(e.into())
    }
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }
}
