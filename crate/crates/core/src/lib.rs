//! Character-level word transduction between closely related languages.

pub mod autodiff;
pub mod cells;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod embed;
pub mod error;
pub mod metrics;
pub mod models;
pub mod oov;
pub mod optim;
pub mod params;
pub mod report;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod train;
pub mod tune;

pub use error::{Error, Result};

/// Scalar type every model is instantiated with.
pub type Real = f64;
