//! Calf play-behaviour analytics.
//!
//! Turns behavioural event logs, per-frame tracking metadata and precomputed
//! image embeddings into a labelled training set, a trained play classifier
//! and welfare statistics.

pub mod error;
pub mod ethogram;
pub mod timing;
pub mod alignment;
pub mod filtering;
pub mod metrics;
pub mod lmm;
pub mod dataset;
pub mod classifier;

pub use error::{Error, Result};
