//! Lightweight speech emotion recognition trained with audio-visual
//! knowledge distillation.
//!
//! The crate trains a small CNN-LSTM classifier on log-Mel spectrograms. A
//! labeled set supplies the usual cross-entropy signal; an unlabeled set
//! supplies soft targets produced offline by two larger teachers (one
//! listening to speech, one watching faces), matched in probability space
//! with a mean-absolute-error penalty. Everything runs on plain f64 CPU
//! math with seeded, bit-reproducible results.
//!
//! Module tour:
//!
//! - [`tensor`]: dense tensors plus a record/replay tape for reverse-mode
//!   gradients over the handful of ops the model needs.
//! - [`audio`]: WAV decoding, resampling to 16 kHz, 3 s segmentation, and
//!   the 64-band log-Mel front end.
//! - [`model`]: the student network and its parameter store.
//! - [`loss`]: supervised, distillation, and confidence-weighted batch
//!   losses.
//! - [`data`]: manifests, teacher outputs, speaker-disjoint folds, batch
//!   interleaving, and a synthetic corpus generator.
//! - [`optim`]: AdamW with decoupled weight decay.
//! - [`metrics`]: confusion matrices, unweighted and weighted recall.
//! - [`eval`]: sliding-window utterance scoring.
//! - [`train`]: the training loop, cross-validation driver, lambda grid
//!   search, and ablations.
//! - [`checkpoint`]: a self-describing binary container for trained weights.
//! - [`config`]: run configuration files and overrides.
//! - [`report`]: result tables, JSON summaries, and SVG curves.
//! - [`cli`]: the command-line front end used by the `liser` binary.

pub mod audio;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod report;
pub mod seeds;
pub mod tensor;
pub mod train;
