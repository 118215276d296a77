//! Polyphonic audio tagging from sequentially labelled data.
//!
//! This crate trains a small convolutional-recurrent network with Gated
//! Linear Units on synthetic polyphonic audio, using either a CTC head over
//! boundary tokens (`class_start` / `class_end`) or clip-level sigmoid heads
//! pooled with global max / average pooling. Everything is implemented from
//! scratch in f64: the log-space CTC forward-backward recursion, the
//! convolution / GLU / BGRU / dense layers with hand-derived backward passes,
//! the Adam optimizer, the log-mel front end, and the evaluation metrics.
//!
//! Module map:
//!
//! - [`ctc`] — CTC objective: blank extension, collapse, log-space trellis,
//!   loss gradient, best-path decoding, and an exhaustive brute-force oracle.
//! - [`seqlab`] — strong / sequential / weak label scheme and file formats.
//! - [`features`] — STFT, mel filterbank, log-mel matrices.
//! - [`fmat`] — the `FMAT` binary matrix container.
//! - [`wav`] — 16-bit PCM mono WAV read/write.
//! - [`nn`] — layers, model assembly, Adam, checkpoints.
//! - [`trainer`] — training loops, early stopping, tag prediction.
//! - [`synth`] — deterministic synthetic clip and dataset generator.
//! - [`metrics`] — AUC, precision/recall/F-score, reports, frame traces.
//! - [`gradcheck`] — central finite-difference utilities used by the tests.

pub mod ctc;
pub mod features;
pub mod fmat;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod seqlab;
pub mod synth;
pub mod trainer;
pub mod wav;

pub use ctc::{PosteriorGrid, TokenSeq};
pub use features::{FeatureConfig, LogMelMatrix, Waveform};
pub use seqlab::{ClassTable, StrongLabel};
