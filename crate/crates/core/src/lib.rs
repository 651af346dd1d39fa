//! Whole-volume MRI sequence type identification.
//!
//! The pipeline loads a brain MRI volume (NIfTI, MetaImage or a DICOM
//! series), canonicalizes it to 16 central slices of 200×200 pixels and
//! classifies it as FLAIR, T1, T1c, T2 or OTHER with an n-channel 2D
//! convolutional network fed `n` adjacent slices.
//!
//! Modules, bottom-up:
//!
//! - [`volume`]: loaders and the canonicalization chain.
//! - [`labels`]: ground-truth labels from file and directory names.
//! - [`scan`]: directory walks producing labeled listings.
//! - [`dataset`]: stratified splits, oversampling and the five dataset variants.
//! - [`augment`]: per-epoch slice subgroups, augmentation and standardization.
//! - [`model`]: the five backbones and checkpoint files.
//! - [`training`]: training loop, best-epoch selection, evaluation and depth sweeps.
//! - [`explain`]: Integrated Gradients attributions and overlay rendering.
//! - [`plot`]: CSV + SVG emitters for accuracy-vs-depth and loss curves.

pub mod augment;
pub mod config;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod labels;
pub mod model;
pub mod plot;
pub mod scan;
pub mod seed;
pub mod store;
pub mod training;
pub mod volume;

pub use error::{Error, Result};
pub use labels::SequenceType;

/// Number of slices every canonical volume keeps.
pub const CANONICAL_DEPTH: usize = 16;
/// Height and width of every canonical slice.
pub const CANONICAL_SIZE: usize = 200;
