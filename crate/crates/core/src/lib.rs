//! Camera and lidar fusion for 2D object detection: calibration geometry,
//! lidar representations, adverse-condition synthesis, a small CNN stack,
//! fusion encoders, detection and evaluation, and dataset I/O.

pub mod adverse;
pub mod cli;
pub mod dataset;
pub mod detect;
pub mod error;
pub mod frame;
pub mod fusion;
pub mod geometry;
pub mod lidar_repr;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
