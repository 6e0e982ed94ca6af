pub mod config;
pub mod correlation;
pub mod dsfm;
pub mod error;
pub mod marketdata;
pub mod pipeline;
pub mod strategy;
pub mod synth;
pub mod timeseries;
pub mod vol;

pub use error::{Error, Result, StageExt};
