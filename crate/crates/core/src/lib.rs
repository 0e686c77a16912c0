//! Learned traffic representations for content-sensitive anomaly detection.
//!
//! Raw captures are cut into 32×32 byte fragments, compressed into 64-value
//! codes by a convolutional GRU autoencoder, and scored by one-class
//! detectors or by the autoencoder's own reconstruction loss. Relevance
//! heatmaps point back at the frames that drove a reconstruction.

mod error;

pub mod detect;
pub mod explain;
pub mod fragment;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod traffic;

pub use error::{Error, Result};
