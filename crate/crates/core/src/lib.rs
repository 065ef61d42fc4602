//! Active incoherent millimeter-wave imaging: array geometry, u-v sampling,
//! forward visibility model, reconstruction, a noise-illumination signal
//! simulator, calibration and image quality metrics.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array_geometry;
pub mod calibration;
pub mod error;
pub mod experiment;
pub mod image_reconstruction;
pub mod noise_signal_simulator;
pub mod pgm;
pub mod quality_metrics;
pub mod scene_model;
pub mod spatial_sampling;
mod transform;
pub mod visibility_forward;

pub use error::{AimError, Result};
