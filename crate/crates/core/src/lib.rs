//! Data augmentation for cellular RSS fingerprint localization.
//!
//! A small set of surveyed scans is enlarged with four techniques (additive
//! noise, per-tower distribution sampling, tower dropping and a per-location
//! variational autoencoder) before training a multinomial deep classifier
//! whose class probabilities are decoded to a weighted-centroid position.
//!
//! Module map:
//! - [`db`]: scans, reference locations, the JSON-lines database format
//! - [`preprocess`]: ASU conversion and feature vectors
//! - [`distfit`]: Beta/Gamma/Gaussian maximum-likelihood fits
//! - [`augment`]: the non-generative augmenters and the combiner
//! - [`nn`]: dense network engine (backprop, SGD, dropout)
//! - [`vae`]: per-location variational autoencoder
//! - [`localizer`]: classifier, centroid decoding, error reports
//! - [`synth`]: synthetic path-loss testbeds
//! - [`pipeline`]: split / augment / train / evaluate orchestration

pub mod augment;
pub mod db;
pub mod distfit;
pub mod error;
pub mod localizer;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod vae;

pub use db::{load_database, save_database, FingerprintDatabase, RawScan, ReferenceLocation, TowerId};
pub use error::{Error, Result};
pub use preprocess::FeatureVector;
