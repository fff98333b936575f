//! Marine debris density engine.
//!
//! Turns time series of corrected multispectral scenes into per-pixel debris probabilities,
//! aggregates them into the Marine Debris Mapping (MDM) index and bins the result into
//! fixed-area hexagons. An evaluation toolkit covers segmentation metrics and
//! precision-recall threshold selection.

pub mod acquisition;
pub mod crs;
pub mod error;
pub mod eval;
pub mod hexbin;
pub mod indices;
pub mod masking;
pub mod mdm;
pub mod pipeline;
pub mod predictor;
pub mod raster;
pub mod synth;

pub use error::{Error, Result};
