//! Command-line front end for DTW-certified anomaly detection.
//!
//! The `dtwcert` binary is a thin layer over these modules; everything it
//! does can be driven from tests through the same functions.

pub mod config;
pub mod debug;
pub mod error;
pub mod falsify;
pub mod pipeline;
pub mod synth;

pub use error::{CliError, Result};
