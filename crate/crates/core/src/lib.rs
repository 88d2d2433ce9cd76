//! Virtual cold-damping experiment: a high-Q mechanical mode read out by a
//! high-finesse cavity and cooled by radiation-pressure feedback.
//!
//! * [`model`]: closed-form responses, spectra and cooling factors.
//! * [`sim`]: time-domain Langevin integration of the loop.
//! * [`spectral`]: Welch estimation, Lorentzian fitting and metrics.
//! * [`scenarios`]: configured experiment runs producing report folders.

pub mod error;
pub mod model;
mod quad;
pub mod scenarios;
pub mod sim;
pub mod spectral;

pub use error::{Error, Result};
