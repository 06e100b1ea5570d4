#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod datacube;
pub mod despeckle;
pub mod error;
pub mod forecast;
pub mod hydro;
pub mod metrics;
pub mod nn;
pub mod raster;
pub mod segmentation;
pub mod synthgen;

pub use error::{Error, Result};
pub use raster::{ProbabilityMap, WaterMask};
