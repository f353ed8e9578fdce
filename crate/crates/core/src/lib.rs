//! Colourised line density plots.
//!
//! Lines are binned into per-bin sets of line IDs; bins with similar line
//! populations are grouped by average-linkage clustering under the overlap
//! coefficient, every bin and line is assigned to a cluster, and clusters are
//! placed on the hue circle so that similar clusters get similar hues.

pub mod assign;
pub mod cluster;
pub mod error;
pub mod eval;
pub mod hue;
pub mod ingest;
pub mod pipeline;
pub mod raster;
pub mod render;
pub mod synth;

pub use error::{Error, Result};
