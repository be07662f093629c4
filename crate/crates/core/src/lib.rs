//! Automatic marker labelling for optical motion capture.
//!
//! A feed-forward network maps a normalized marker cloud to a square score
//! matrix, Sinkhorn normalization relaxes the scores to a doubly-stochastic
//! matrix, and a Hungarian decode projects that onto a hard assignment of
//! labels to tracks. Confidence-weighted voting over tracked trajectories
//! then cleans up residual per-frame errors.
//!
//! The crate is organized along the pipeline:
//!
//! - [`types`]: frames, permutations, matrices
//! - [`preprocess`]: pose-invariant frame normalization
//! - [`sinkhorn`]: differentiable doubly-stochastic relaxation
//! - [`permnet`]: the network, its training loop, and checkpoints
//! - [`assign`]: optimal decode of a relaxation to a permutation
//! - [`trajlabel`]: trajectory segmentation and label voting
//! - [`synthdata`]: synthetic capture data and augmentation
//! - [`eval`]: accuracy metrics and report generation

pub mod assign;
pub mod error;
pub mod eval;
pub mod permnet;
pub mod preprocess;
pub mod sinkhorn;
pub mod synthdata;
pub mod trajlabel;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    apply_permutation, LabelledFrameResult, MarkerFrame, Permutation, SquareMatrix,
    OCCLUSION_PLACEHOLDER,
};
