//! Latent dynamics on the grid nodes, ODE integration and the observation decoder.

mod decoder;
mod dynamics;
mod mlp;
mod solver;

pub use decoder::{decode, Decoder, DecoderConfig, DecoderMode};
pub use dynamics::{dynamics_operator, dynamics_rhs, Dynamics, DynamicsConfig, LatentState};
pub use mlp::{MlpSpec, MlpVars};
pub use solver::{odesolve, solve, solve_detached, Rhs, SolveStats, SolverConfig, SolverMethod};
