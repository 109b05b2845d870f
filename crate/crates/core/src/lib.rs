//! Full-field X-ray fluorescence imaging through square-pore micro pore
//! optics: Monte Carlo transport, detector calibration and PSF analysis.
//!
//! - [`optics`]: critical angle, grazing reflection and channel tracing.
//! - [`sim`]: scenes, photon sampling and the parallel simulator.
//! - [`cube`]: the spectral image cube and its SIC file format.
//! - [`events`]: TPXE event records and per-pixel ToT calibration.
//! - [`analysis`]: flat-field, energy windows, PSF profiles and the FFT
//!   background-suppression pipeline.
//! - [`config`]: run configuration files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod cube;
pub mod events;
pub mod optics;
pub mod sim;

pub use config::RunConfig;
pub use cube::SpectralImage;
pub use events::{CalibrationMap, LineSet, PixelEvent};
pub use optics::{Material, MpoGeometry, PathClass};
pub use sim::{DetectorSpec, Scene, Source};
