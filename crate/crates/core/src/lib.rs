//! Underwater acoustic target recognition with a speech-style front end.
//!
//! The pipeline mirrors how speech foundation models consume audio:
//! 16 kHz mono audio is cut into fixed clips ([`ingest`]), turned into
//! stacked log-Mel frames ([`dsp`]), encoded by a transformer and classified
//! by a mean-pool + linear softmax head ([`nn`]). [`optim`] trains the model
//! (from scratch, head-only, or full fine-tuning of a pretrained encoder) and
//! [`eval`] implements in-domain, variable-length and cross-domain scoring.
//! [`synth`] generates a two-domain synthetic corpus so the whole thing can
//! be exercised without the real datasets.

pub mod dsp;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod nn;
pub mod optim;
pub mod synth;

pub use error::{Error, Result};

/// Crate version, reported by the `version` command.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
