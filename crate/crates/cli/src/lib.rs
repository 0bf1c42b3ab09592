//! Command-line front end for port-Hamiltonian analysis, spectra and simulation.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod examples;
pub mod report;

pub use cli::run;
pub use error::CliError;
