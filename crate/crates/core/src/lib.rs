pub mod actor;
pub mod bundle;
pub mod config;
pub mod data;
pub mod datagen;
mod error;
pub mod evaluator;
pub mod features;
pub mod hypernet;
pub mod instance;
pub mod metrics;
pub mod model;
pub mod training;
pub mod utilities;

pub use error::{Error, Result};
