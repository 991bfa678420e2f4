//! Latent neural PDE models for irregular spatiotemporal data.
//!
//! The latent state lives on the observation nodes and is made spatially
//! continuous by interpolation. Its dynamics are a neural network applied to
//! interpolant values on a fixed stencil around each node (method of lines),
//! integrated with an adaptive Runge-Kutta solver. Training uses amortised
//! variational inference with multiple shooting.

pub mod config;
pub mod datagen;
pub mod encoder;
pub mod error;
pub mod forecaster;
pub mod formats;
pub mod gradcheck;
pub mod latent_pde;
pub mod model;
pub mod numcore;
pub mod oracles;
pub mod spatial;
pub mod trainer;
pub mod variational;

pub use error::{Error, Result, SolverError};
