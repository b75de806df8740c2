//! Training, evaluation and interpretation of compact convolutional networks
//! for multi-channel EEG epochs.
//!
//! The crate is organised bottom-up:
//!
//! - [`engine`]: tensors, layers with hand-derived backward passes, Adam,
//!   cross-entropy and a finite-difference gradient checker.
//! - [`models`]: the built-in SCCNet, EEGNet and ShallowConvNet architectures
//!   and the on-disk checkpoint format.
//! - [`dataio`]: epoch files, montages, training-scheme splits, batching and
//!   a synthetic EEG generator.
//! - [`trainer`]: the training loop, classification metrics, prediction
//!   export and a Wilcoxon signed-rank utility.
//! - [`interpret`]: scalp topomaps and spectral-response images of trained
//!   SCCNet kernels.

pub mod dataio;
pub mod engine;
mod error;
pub mod interpret;
pub mod models;
mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
