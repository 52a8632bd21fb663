pub mod cli;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod raster;
pub mod segmask;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
