//! Deep-learning engine and knee X-ray osteoporosis classification pipeline.
//!
//! Layers, bottom up:
//!
//! * [`tensor`], [`kernels`], [`tape`], [`gradcheck`]: dense tensors, the
//!   differentiable primitives, reverse-mode autodiff and a finite-difference
//!   checker.
//! * [`model`]: residual backbone, five-block feature enhancement stack,
//!   dense classification head and weight serialization.
//! * [`preprocess`]: decoding, bilinear resizing, `/255` normalization and
//!   random affine augmentation.
//! * [`data`]: class-folder manifests, balancing, stratified splits,
//!   dataset merging and batching.
//! * [`train`]: Adam, the epoch loop, grid search and checkpoints.
//! * [`eval`]: confusion matrices, precision/recall/F1 and report files.

pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kernels;
pub mod model;
pub mod data;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tape::{Mode, Tape, Var};
pub use tensor::{Element, Tensor};
