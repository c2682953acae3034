//! Marked temporal point processes for continuous-time event sequences.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: events, sequences, inter-event deltas, CSV/JSONL ingestion,
//!   splitting, synthetic deletion and synthetic generators.
//! - [`autodiff`]: a small reverse-mode tape with an Adam-equipped parameter
//!   store. Every trainable model is built on it.
//! - [`encoder`]: the gated recurrent history encoder.
//! - [`heads`]: log-normal flows for gaps and distances, and the categorical
//!   mark head, with closed-form KL divergences.
//! - [`mtpp`]: the fully observed neural MTPP (likelihood, training,
//!   prediction, forecasting).
//! - [`imtpp`]: the coupled observed/missing model trained on an ELBO, with
//!   imputation and forecasting under missingness.
//! - [`transfer`]: source training and target fine-tuning with freezing.
//! - [`hawkes`]: a multivariate exponential-kernel Hawkes process with a
//!   shared excitation matrix, MLE fitting and community assignment.
//! - [`harness`]: metrics, experiment configs and the task runner behind the
//!   `ctes` binary.
//!
//! All randomness flows from explicit `u64` seeds through
//! [`rand_chacha::ChaCha8Rng`], see [`rng`].

pub mod autodiff;
pub mod data;
pub mod encoder;
pub mod harness;
pub mod hawkes;
pub mod heads;
pub mod imtpp;
pub mod mtpp;
pub mod rng;
pub mod transfer;

mod error;

pub use error::{Error, Result};
