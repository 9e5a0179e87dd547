//! Simulation and analysis of a periodically driven transmon spin chain.
//!
//! * [`model`]: chain, drive protocol, pulse envelope, disorder, device data.
//! * [`dynamics`]: closed-system split-step propagation and stroboscopic records.
//! * [`open_system`]: quantum-trajectory decoherence from T1 / Tphi.
//! * [`analysis`]: spectra, π/T peaks, windowed lifetimes and nonlinear fits.
//! * [`device_model`]: Bose-Hubbard exact diagonalisation and effective ZZ.
//! * [`runner`]: configuration, named presets, sweeps and persistence.

pub mod analysis;
pub mod device_model;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod model;
pub mod open_system;
pub mod runner;

pub use error::{Error, Result};
