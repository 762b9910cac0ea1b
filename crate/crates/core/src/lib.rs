//! Detection of AI-generated images from the noise fingerprint of their
//! simplest patch, with an optional perception-guided enhancement stage for
//! blurred or compressed inputs.
//!
//! Pipeline: resize the image, crop candidate patches, keep the one with the
//! lowest texture diversity ([`patch`]), extract its high-pass residuals
//! ([`srm`]) and classify them ([`models`]). Training, evaluation and the
//! on-disk formats live in [`harness`].

pub mod autodiff;
pub mod degrade;
pub mod harness;
pub mod image;
pub mod models;
pub mod patch;
pub mod rng;
pub mod srm;

pub use crate::image::Image;
