//! Simulation and analysis toolkit for feedback cooling of a magnet levitated
//! above a type-I superconductor.
//!
//! The crate is organised by subsystem:
//!
//! * [`trap_model`]: static levitation properties from the image-dipole potential.
//! * [`langevin`]: stochastic single-mode dynamics with thermal, vibration and
//!   detector noise and a cold-damping feedback loop.
//! * [`spectral`]: Welch PSDs, Lorentzian and ring-down fits, calibrated
//!   mode temperatures and the thermal-limit diagnostic.
//! * [`limits`]: detection-noise-limited cooling floors and the parameter
//!   table report.
//! * [`coil_coupling`]: dipole field, pick-up coil flux and coupling optimisation.
//! * [`cli`]: config-driven command-line front end.
//!
//! All quantities are SI. Power spectral densities are one-sided throughout.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod coil_coupling;
pub mod constants;
pub mod error;
pub mod langevin;
pub mod limits;
pub mod spectral;
pub mod trap_model;

pub use error::{Error, Result};
