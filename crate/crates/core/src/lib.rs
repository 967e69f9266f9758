//! Wind speed forecasting with multidimensional depthwise-separable CNNs.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`], [`kernels`], [`autodiff`]: dense `f64` tensors and a
//!   reverse-mode tape.
//! - [`nn`]: convolution, batch norm, dense and attention layers.
//! - [`model`]: the five trainable architectures, the persistence baseline,
//!   parameter accounting and the weight file format.
//! - [`data`]: CSV ingestion, min-max scaling, windowing and splits.
//! - [`train`]: MSE loss, Adam and the early-stopping fit loop.
//! - [`metrics`]: MAE/MSE, evaluation and report rendering.
//! - [`repro`]: the reproduction criteria shared by the CLI and tests.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod repro;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, ParamId, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
