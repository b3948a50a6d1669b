//! Silent-speech EMG decoding.
//!
//! Multichannel surface-EMG recorded while a speaker silently articulates is
//! turned into phoneme and word sequences:
//!
//! 1. [`preprocess`]: reference subtraction, Butterworth bandpass, sentence
//!    segmentation, z-normalization and 50 ms / 20 ms framing.
//! 2. [`spd`] and [`features`]: each window becomes a regularized SPD edge
//!    matrix, approximately diagonalized in the eigenbasis of the training
//!    set's Log-Cholesky Fréchet mean.
//! 3. [`neural`]: a stacked bidirectional GRU trained with [`ctc`] loss
//!    emits per-frame phoneme posteriors.
//! 4. [`ctc`] prefix beam search gives phoneme strings; [`lm`] searches the
//!    composed CTC/lexicon/n-gram space for words.
//! 5. [`metrics`] scores the output; [`testkit`] generates synthetic corpora
//!    and brute-force oracles.

pub mod config;
pub mod ctc;
pub mod error;
pub mod exec;
pub mod features;
pub mod io;
pub mod linalg;
pub mod lm;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod preprocess;
pub mod spd;
pub mod testkit;

pub use error::{Error, Result};
