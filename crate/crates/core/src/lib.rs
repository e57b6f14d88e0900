//! Content-aware MOS prediction for synthetic speech.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense f64 tensors, a reverse-mode autodiff tape, layers, Adam
//!   and the `MOSCKPT1` checkpoint format.
//! * [`signal`]: WAV ingestion, magnitude spectrograms and autocorrelation F0.
//! * [`features`]: phoneme alignments, phoneme-level prosody, frame propagation
//!   and ingestion of precomputed linguistic features (`EMB1`).
//! * [`models`]: feature encoders and the MOSNet, LDNet and SSL-head families
//!   with their fusion points.
//! * [`training`]: losses, the early-stopping training loop and prediction.
//! * [`metrics`]: MSE, LCC, SRCC and Kendall tau-b at utterance and system level.
//! * [`datasplit`]: unseen-category split construction and Wasserstein-based
//!   candidate selection.
//! * [`dataset`]: manifests, ratings tables and the synthetic corpus generator.

pub mod dataset;
pub mod datasplit;
pub mod error;
pub mod features;
pub mod metrics;
pub mod models;
pub mod signal;
pub mod tensor;
pub mod training;
pub(crate) mod util;

pub use error::{Error, Result};
pub use tensor::{Graph, Mode, ParameterStore, Tensor, Var};
