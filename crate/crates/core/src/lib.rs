pub mod error;
pub mod blink;
pub mod cli;
pub mod detector;
pub mod events;
pub mod metrics;
pub mod net;
pub mod raster;
pub mod representation;
pub mod seeds;
pub mod simulator;
pub mod synth;

pub use error::{Error, Result};
