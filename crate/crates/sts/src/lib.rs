//! Structured time series (STS) classification toolkit.
//!
//! A self-contained CPU implementation of a dual-stream convolutional
//! classifier for tree-structured multivariate time series, built on its own
//! dense-tensor reverse-mode autodiff engine. Includes the hand-crafted
//! feature augmentation, a synthetic articulated-skeleton data generator,
//! reference baselines (KNN, Gaussian naive Bayes, MLP, plain CNN) and a
//! training/evaluation harness.
//!
//! The `sts` binary exposes the `synth`, `train`, `ablate`, `baselines` and
//! `gradcheck` subcommands; the crate's `examples/` directory shows each
//! capability as a standalone program.

pub mod adam;
pub mod baselines;
pub mod checkpoint;
pub mod config;
mod conv;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod gradcheck;
mod io_util;
pub mod model;
pub mod repr;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod topology;
pub mod train;

pub use error::{Result, StsError};
pub use io_util::write_atomic;
pub use tensor::Tensor;
