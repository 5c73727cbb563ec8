//! Synthetic hyperspectral vegetation dataset generation.
//!
//! The chain runs: a forward canopy reflectance model ([`rtm`]) fills a
//! Latin-hypercube lookup table ([`lut`]); sensor-band observations are
//! inverted per pixel against it ([`inversion`]) to median and percentile
//! trait maps; the median traits are simulated forward again to full
//! 400-2500 nm cubes, and everything is written as per-tile raster bundles
//! ([`raster`]). [`pipeline`] strings the steps together for the CLI.

pub mod config;
pub mod error;
pub mod exec;
pub mod inversion;
pub mod lut;
pub mod pipeline;
pub mod raster;
pub mod rtm;
pub mod spectral;

pub use error::{Error, Result};
