//! Core library for semi-supervised deep-embedded-clustering fault diagnosis.
//!
//! The crate is organised around a three-stage training pipeline:
//!
//! 1. pre-train a skip-connection convolutional autoencoder on frequency-domain
//!    vibration windows ([`sccae`]),
//! 2. jointly refine the encoder and a set of cluster centroids with a
//!    clustering objective plus virtual adversarial smoothing ([`ssidec`]),
//! 3. train a discriminative head on the labelled data augmented with
//!    pseudo-labels harvested from stage 2 ([`classifier`]).
//!
//! Supporting modules supply the hand-rolled neural-network substrate
//! ([`nn`]), signal ingestion and task assembly ([`signal`]), k-means
//! ([`kmeans`]), evaluation metrics ([`metrics`]) and the experiment harness
//! ([`harness`]). Everything is deterministic given a seed: all randomness
//! flows from `ChaCha8Rng` instances derived from the experiment seed.

pub mod classifier;
pub mod config;
pub mod error;
pub mod harness;
pub mod kmeans;
pub mod metrics;
pub mod nn;
pub mod sccae;
pub mod signal;
pub mod ssidec;

pub use error::{Error, Result};
