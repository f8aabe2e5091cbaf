//! Target speaker extraction laboratory.
//!
//! The crate bundles everything needed to build and study cue-conditioned
//! speech extraction at desk scale:
//!
//! - [`tensor`]: f64 tensors with tape-based reverse-mode autodiff
//! - [`audio`]: WAV I/O, synthetic speakers, SNR-controlled mixing, manifests
//! - [`metrics`]: SI-SDR / SDR (and improvements), EER and minDCF
//! - [`embedder`]: x-vector and xi-vector style speaker embedding networks
//! - [`lda`]: LDA on speaker embeddings with a whitening + Jacobi solver
//! - [`separator`]: dual-path transformer extractor with cross-attention cue fusion
//! - [`trainer`]: SI-SDR loss, Adam, plateau schedule, training loop
//! - [`cli`]: the `tse` command-line front end
//! - [`reference`]: published full-scale results the desk runs are compared against

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod audio;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod embedder;
pub mod error;
pub mod gradcheck;
pub mod lda;
pub mod metrics;
pub mod nn;
pub mod reference;
pub mod rng;
pub mod separator;
pub mod tensor;
pub mod trainer;

pub use error::{Result, TseError};
