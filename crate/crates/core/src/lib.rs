//! Streaming anomaly detection with an adaptively gated linear state-space
//! model, plus a Kalman-filter baseline, a synthetic spike benchmark, and the
//! evaluation metrics used to compare them.

pub mod datagen;
pub mod error;
pub mod io;
pub mod kalman;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod stream;
pub mod training;

pub use error::{Error, Result};
