//! Dynamic depth-supervised radiance fields for RGB-D scene reconstruction.

pub mod baseline;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod field;
pub mod geometry;
pub mod metrics;
pub mod oracle;
pub mod raster;
pub mod real;
pub mod render;
pub mod segment;
pub mod train;

pub use error::{Error, Result};
