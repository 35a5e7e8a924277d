//! Detection of digestate (exogenous organic matter) application on
//! agricultural parcels from Sentinel-2 style image time series.
//!
//! The crate covers the whole batch pipeline: parcel and event ingestion
//! ([`geodata`]), scene loading and masking ([`raster`]), spectral indices
//! ([`indices`]), per-parcel feature vectors ([`features`]), four
//! from-scratch classifiers ([`models`]), metrics and photo-interpretation
//! statistics ([`evaluation`]), a synthetic corpus generator ([`synth`]) and
//! the on-disk stage orchestration ([`pipeline`]).

pub mod error;
pub mod geodata;
pub mod geotiff;
pub mod grid;
pub mod indices;
pub mod raster;
pub mod stats;
pub mod features;
pub mod models;
pub mod evaluation;
pub mod synth;
pub mod pipeline;

pub use error::{Error, Result};
