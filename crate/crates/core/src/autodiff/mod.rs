//! A small reverse-mode differentiation engine.
//!
//! Values live on a [`Tape`]; parameters live in a [`ParamStore`] and are
//! copied onto the tape for each forward pass. After [`Tape::backward`] the
//! returned [`ParamGrads`] are accumulated into the store and consumed by
//! [`Adam`].

mod attention;
pub mod gradcheck;
mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use attention::cross_attention;
pub use optim::Adam;
pub use params::{ParamGrads, ParamId, ParamStore, Parameter};
pub use tape::{BatchStats, Tape, Var, BCE_CLAMP, BN_EPS, NORMALIZE_FLOOR};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("expected a one-element tensor, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("parameter {0} has no gradient")]
    MissingGradient(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
}
