//! Online contextual anomaly detection for multivariate sensor streams.
//!
//! The crate is organized as a pipeline: [`datagen`] produces or ingests
//! nine-feature air-quality series, [`tuner`] searches forecaster
//! hyperparameters with Hyperband, [`detector`] runs the online
//! sliding-window detection loop on top of the [`nn`] bidirectional LSTM
//! forecaster, and [`eval`] scores verdict streams against labeled events.
//!
//! Everything is seeded and deterministic: the same inputs and seed produce
//! bit-identical models, verdicts, and files, with or without the `parallel`
//! feature.

// Feature columns live in parallel fixed-size arrays indexed by the same
// feature number; indexed loops keep those sites uniform.
#![allow(clippy::needless_range_loop)]

pub mod datagen;
pub mod detector;
pub mod error;
pub mod eval;
pub mod nn;
mod par;
pub mod seeds;
pub mod series;
pub mod tuner;

pub use error::Error;
