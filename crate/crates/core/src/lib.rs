//! Signal-level simulator of an integrated photonic convolutional neural
//! network built on a time-wavelength interleaved optical convolution unit.
//!
//! The pipeline modulates a flattened image onto a multi-wavelength frame,
//! weights each wavelength with a micro-ring resonator bank, aligns the
//! channels with per-wavelength delays (ideal, dispersive, or arrayed),
//! photodetects, quantizes and samples the convolution outputs. On top of
//! that sit a small 3-conv-layer digit classifier, its projected-SGD trainer,
//! and the evaluation machinery: weighting-error separation, residual-error
//! Gaussian fits and injection studies, finesse/ADC sweeps, throughput tables
//! and memory-access models.

pub mod analysis;
pub mod dataset;
pub mod delay;
pub mod device_models;
pub mod error;
pub mod grid;
pub mod network;
pub mod ocu;
pub mod waveform;

pub use error::{Error, Result};
pub use grid::Matrix;
