//! Preprocessing engine for redundant, heterogeneous sensor streams shared by
//! several collocated services.
//!
//! Per modality cohort the engine scores every sensor (fuzzy-voting accuracy
//! and Poisson reliability), ranks sensors against each service's utopia
//! vector, fuses the selected streams with a Kalman filter and computes
//! per-service feature vectors, running shared feature functions once.

pub mod error;
pub mod fusion;
pub mod harness;
pub mod model;
pub mod pipeline;
pub mod ranking;
pub mod reliability;
pub mod voting;

pub use error::{Error, Result};
