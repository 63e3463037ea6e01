//! Offline experimental design for NV-center nuclear spin detection.
//!
//! The crate simulates CPMG survival-probability signals for clusters of
//! hyperfine-coupled 13C spins, ranks measurement delays by the prior
//! variance of the signal (the surrogate information gain), turns the
//! selected delays into a measurement-time budget, writes synthetic training
//! shards and scores spin-detection predictions.

pub mod acquisition;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod moments;
pub mod prior;
pub mod seed;
pub mod sig;
pub mod simulate;
pub mod spin_model;

pub use error::{Error, Result};
pub use seed::Seed;
