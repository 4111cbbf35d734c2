//! Pseudospectral simulation and diagnostics for the one-dimensional
//! stochastic Dirac-Klein-Gordon system on a periodic box.

pub mod error;
pub mod grid;
pub mod model;
pub mod noise;
pub mod bourgain;
pub mod dynamics;
pub mod estimates;
pub mod config;
pub mod cli;

pub use error::{Error, Result};
pub use grid::{GridSpec, SpectralField};
