//! Target-speaker direction-of-arrival estimation for a six-microphone
//! circular array.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod train;

pub use config::Config;
pub use error::{Error, Result};
