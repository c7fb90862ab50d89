//! Geometric phase of a two-level atom moving above a lossy surface.

pub mod cache;
pub mod config;
pub mod error;
pub mod integrator;
pub mod kernel;
pub mod master;
pub mod output;
pub mod params;
pub mod phase;
pub mod quadrature;
pub mod sweep;
pub mod validate;

pub use error::{Error, Result};
