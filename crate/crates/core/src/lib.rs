//! Linear port-Hamiltonian systems on a one-dimensional interval: model types, Dirac
//! structures, well-posedness and stability certificates, spectra and structure-preserving
//! simulation.

pub mod analysis;
pub mod dirac;
pub mod error;
pub mod library;
pub mod linalg;
pub mod model;
pub mod simulate;
pub mod spectrum;
pub mod tolerance;

pub use error::{PhsError, Result};
pub use tolerance::Tolerances;
