pub mod config;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod model;
pub mod numcore;
pub mod parallel;
pub mod seeds;
pub mod simulator;
pub mod training;

pub use error::{Error, Result};
