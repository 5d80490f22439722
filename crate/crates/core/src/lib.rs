//! Cavity-QED spin-ensemble magnetometer model.
//!
//! A semiclassical Tavis–Cummings description of an optically polarized,
//! inhomogeneously broadened NV ensemble in a microwave resonator probed in
//! reflection. Modules build on each other bottom-up:
//!
//! * [`model`], [`config`]: parameters, units, presets.
//! * [`distribution`]: spin-frequency densities and binning.
//! * [`linear`]: weak-drive reflection, polaritons, spectroscopy maps.
//! * [`nonlinear`]: saturable steady states, threshold, bistability.
//! * [`dynamics`]: time integration of the mean-field equations.
//! * [`noise`]: thermal, spin-refrigerated, phase and amplifier noise.
//! * [`sensitivity`]: signal transduction and operating-point search.
//! * [`design`]: density/volume and Q/coupling design maps.
//! * [`measurement`]: trace synthesis, Welch PSD, field recovery.

pub mod config;
pub mod design;
pub mod distribution;
pub mod dynamics;
pub mod error;
pub mod linear;
pub mod measurement;
pub mod model;
pub mod noise;
pub mod nonlinear;
pub mod sensitivity;

pub use error::{Error, Result};
pub use model::{CavityParams, Device, DriveParams, SpinEnsembleParams};
