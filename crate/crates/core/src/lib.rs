pub mod cli;
pub mod config;
pub mod error;
mod fft;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optics;
pub mod scene;
pub mod solver;
pub mod transforms;

pub use error::{Error, FormatError, Result};
