use std::sync::Arc;

use super::mlp::{MlpSpec, MlpVars};
use super::solver::Rhs;
use crate::error::{contract, Error, Result};
use crate::numcore::{Activation, Graph, SparseRows, Var};
use crate::spatial::{node_neighborhood_operator, InterpMethod, Interpolator, SpatialGrid, Stencil};

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsConfig {
    pub stencil: Stencil,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub latent_dim: usize,
    pub method: InterpMethod,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            stencil: Stencil::default_two_circle(),
            hidden: vec![128, 128],
            activation: Activation::Tanh,
            latent_dim: 3,
            method: InterpMethod::Linear,
        }
    }
}

impl DynamicsConfig {
    /// Input `K * d` (stacked stencil values), output `d`.
    pub fn mlp_spec(&self) -> MlpSpec {
        MlpSpec::new(
            self.stencil.len() * self.latent_dim,
            &self.hidden,
            self.latent_dim,
            self.activation,
        )
    }
}

/// Latent state on the grid nodes at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub z: crate::numcore::Tensor,
    pub t: f64,
}

/// Stencil operator for the dynamics: row `j*K + k` interpolates `x_j + offset_k`.
pub fn dynamics_operator(grid: &SpatialGrid, cfg: &DynamicsConfig) -> Result<Arc<SparseRows>> {
    let geometry = Interpolator::new(grid.clone(), cfg.method)?;
    Ok(Arc::new(node_neighborhood_operator(&geometry, &cfg.stencil)?))
}

/// The method-of-lines right-hand side `dz_j/dt = F(z(N_S(x_j)))` for all nodes at once.
#[derive(Clone, Debug)]
pub struct Dynamics {
    op: Arc<SparseRows>,
    k: usize,
    d: usize,
    mlp: MlpVars,
}

impl Dynamics {
    pub fn new(op: Arc<SparseRows>, cfg: &DynamicsConfig, mlp: MlpVars) -> Result<Self> {
        let k = cfg.stencil.len();
        contract!(
            op.n_rows() == op.n_cols() * k,
            "operator has {} rows for {} nodes and a {k}-point stencil",
            op.n_rows(),
            op.n_cols()
        );
        Ok(Self {
            op,
            k,
            d: cfg.latent_dim,
            mlp,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.op.n_cols()
    }

    pub fn latent_dim(&self) -> usize {
        self.d
    }
}

/// Evaluates the right-hand side for `z` (N × d); fails naming the first node with a non-finite derivative.
pub fn dynamics_rhs(g: &mut Graph, dynamics: &Dynamics, z: Var) -> Result<Var> {
    contract!(
        g.shape(z) == [dynamics.n_nodes(), dynamics.d],
        "state shape {:?}, expected [{}, {}]",
        g.shape(z),
        dynamics.n_nodes(),
        dynamics.d
    );
    let patches = g.sparse(&dynamics.op, z, dynamics.k)?;
    let out = dynamics.mlp.forward(g, patches)?;
    if let Some(i) = g.value(out).iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite dynamics output at node {}",
            i / dynamics.d
        )));
    }
    Ok(out)
}

impl Rhs for Dynamics {
    fn eval(&self, g: &mut Graph, _t: f64, z: Var) -> Result<Var> {
        dynamics_rhs(g, self, z)
    }
}
