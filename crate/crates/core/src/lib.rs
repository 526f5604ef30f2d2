pub mod blocks;
pub mod config;
pub mod dataio;
pub mod diagnostics;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
