//! Selective pseudo-labelling for unsupervised domain adaptation, with
//! optional norm-VAE feature augmentation.
//!
//! A classifier trained on labelled source features pseudo-labels the target
//! domain; a growing, class-balanced subset of confident pseudo-labels is
//! added back to training over `T` iterations. [`norm_vae`] adds synthetic
//! cross-domain features built from source/target pairs of the same class.

pub mod checkpoint;
pub mod classifier;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod norm_vae;
pub mod pipeline;
pub mod projection;
pub mod pseudo_label;
pub mod report;
pub mod tensor;

pub use error::{Error, ParseError, Result};
