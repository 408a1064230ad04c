pub mod calib;
pub mod config;
pub mod conformal;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod pipeline;
pub mod predictors;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
