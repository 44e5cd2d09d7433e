//! Helium-loaded superconducting CPW resonator toolkit.

pub mod config;
pub mod elliptic;
pub mod error;
pub mod estimation;
pub mod formats;
pub mod fourier;
pub mod helium;
pub mod pipeline;
pub mod resonator;
pub mod spectral;
pub mod synthesis;
pub mod trace;

pub use error::{Error, Result};
pub use trace::{TimeTrace, Unit};
