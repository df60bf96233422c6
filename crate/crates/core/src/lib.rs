//! Convolutional network training with transfer-entropy feedback.
//!
//! - [`nn`]: tensors, the seven layer kinds, loss, SGD with momentum and a
//!   finite-difference gradient checker.
//! - [`te`]: binarised event windows and the plug-in transfer-entropy
//!   estimator over pairs of neurons.
//! - [`train`]: the training loop that damps the final linear layer's
//!   weights by `(1 - te)` after each SGD step.
//! - [`harness`]: datasets, presets, configuration, paired TE-on/TE-off
//!   experiments, metrics CSV and checkpoints.

pub mod error;
pub mod harness;
pub mod nn;
pub mod te;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{DType, Real, Tensor};
