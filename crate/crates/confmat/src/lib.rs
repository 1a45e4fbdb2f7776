//! Confusion-matrix normalization toolkit.
//!
//! A confusion matrix mixes two signals: how similar classes look to the
//! classifier, and how the evaluation set (and the classifier's own bias)
//! distributes mass across classes. This crate separates the two. It
//! provides the classical row, column, and joint normalizations together
//! with bistochastic normalization, which removes both row and column
//! bias at once by scaling the matrix to uniform marginals. Two
//! independent scaling routes (sweep-based and diagonal-update) expose the
//! same fixed point and cross-check each other.
//!
//! The geometry module grounds these normalizations in latent space: a
//! geometric confusion matrix measures the overlap of true-class and
//! predicted-class point clouds on a shared histogram grid, and a choice
//! of per-class weights makes it mimic each algebraic normalization.
//!
//! The synthgen and experiments modules generate synthetic classifier
//! outputs with controlled class similarity and distribution bias, and
//! score each normalization on how well it recovers the planted structure.

pub mod error;
pub mod experiments;
pub mod geometry;
pub mod io;
pub mod matrix;
pub mod scaling;
pub mod synthgen;

pub use error::{Error, Result};
pub use matrix::{ConfusionMatrix, NormalizationKind};
pub use scaling::{bistochastic_normalize, ipf, ras, IpfConfig, IpfResult, ScalingWeights};
