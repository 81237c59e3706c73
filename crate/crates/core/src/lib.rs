//! Structure-aware audio embeddings trained through their self-similarity matrix.
//!
//! The pipeline turns an audio track into beat-centred constant-Q patches,
//! encodes every patch into a unit-norm vector, builds the self-similarity
//! matrix (SSM) of those vectors and compares it to a binary SSM derived from
//! segment annotations. The comparison is a class-balanced binary cross
//! entropy which is differentiable end to end, so the encoder can be trained
//! directly against annotated structure.
//!
//! Module map:
//!
//! - [`ingest`]: WAV, beat, annotation and SSMF matrix readers/writers.
//! - [`frontend`]: CQT, sub-beat clustering and patch assembly.
//! - [`diffcore`]: reverse-mode tape with the layer primitives and a gradient checker.
//! - [`encoder`]: the convolutional encoder and its model file.
//! - [`ssm`]: estimated and ground-truth self-similarity matrices, PGM rendering.
//! - [`loss`]: the weighted binary cross entropy and its gradient.
//! - [`optim`]: MADGRAD, the training loop and checkpoints.
//! - [`eval`]: Loss/AUC scoring of feature variants and corpus reports.
//! - [`synthgen`]: synthetic structured tracks for reproducible experiments.

pub mod diffcore;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod ingest;
pub mod loss;
pub mod optim;
pub mod ssm;
pub mod synthgen;
mod util;

pub use error::{Error, Result};
