//! Trainable networks and the scoring pipelines built from them.
//!
//! Every network registers its parameters in a shared [`ParamStore`] under a
//! dotted prefix (`ssp.` for the classifier, `essp.` for the enhancement
//! front end) and runs inside a [`Session`].
//!
//! [`ParamStore`]: crate::autodiff::ParamStore

mod layers;
mod nets;
mod pipeline;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::image::ImageError;
use crate::patch::PatchError;

pub use layers::{
    BatchNorm, Conv2d, ConvBnRelu, CrossAttentionBlock, Linear, Session, UpConv, BN_MOMENTUM,
};
pub use nets::{
    EnhancementUnet, PerceptionModule, SspClassifier, TaskEmbeddings, CLASSIFIER_WIDTHS, EMBED_DIM,
    PERCEPTION_WIDTH, UNET_BOTTLENECK, UNET_WIDTHS,
};
pub use pipeline::{
    choose_patches, classifier_input, patch_tensor, prepare_image, tensor_patches, Detector,
    DetectorSpec, EnhancementFront, FrontPass, FrontSpec, PipelineConfig, ScoreMode, FRONT_PREFIX,
    INPUT_SCALE, SSP_PREFIX,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("detector has no enhancement front end")]
    MissingFront,
}
