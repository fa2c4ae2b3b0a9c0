//! Multi-abstraction refinement networks for 3D point clouds.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`]: a small deterministic reverse-mode autodiff engine with a
//!   finite-difference gradient checker.
//! - [`pointops`]: sampling, neighborhood search and interpolation kernels.
//! - [`layers`]: set abstraction, cross-referencing, re-encoding, feature
//!   propagation and fully connected heads.
//! - [`model`]: the published classifier, part segmenter and lite
//!   configurations, plus parameter/FLOP accounting.
//! - [`data`]: point-cloud I/O, the synthetic shape generator, augmentation.
//! - [`harness`]: training, evaluation, ablations, benchmarking, checkpoints.

pub mod error;
pub mod harness;
pub mod data;
pub mod layers;
pub mod model;
pub mod pointops;
pub mod tensor;

pub use error::{CheckpointError, Error, Result};
