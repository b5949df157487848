//! Snapshot hyperspectral imaging with interleaved dispersive metasurfaces:
//! optics simulation, rendering, calibration, reconstruction and metrics.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod domain;
pub mod error;
pub mod fft;
pub mod io;
pub mod metasurface;
pub mod metrics;
pub mod propagation;
pub mod reconstruction;
pub mod render;

pub use domain::*;
pub use error::{Error, Result};
