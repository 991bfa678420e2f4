use super::grid::Point;
use super::interp::{Interpolant, Interpolator, QueryWeights};
use super::stencil::Stencil;
use crate::error::{contract, Result};
use crate::numcore::{SparseRows, Tensor};

/// Interpolant values at `x + offset_k` for every stencil offset, as a K × c tensor.
pub fn eval_neighborhood(interp: &Interpolant, x: Point, stencil: &Stencil) -> Result<Tensor> {
    let c = interp.channels();
    let mut data = Vec::with_capacity(stencil.len() * c);
    for o in stencil.offsets() {
        data.extend(interp.evaluate([x[0] + o[0], x[1] + o[1]])?);
    }
    Tensor::new(vec![stencil.len(), c], data)
}

/// Sparse operator mapping node values (N × c) to stencil values at each target.
///
/// Row `j * K + k` holds the weights of `targets[j] + offset_k`, so applying it
/// to an N × c field and reshaping gives one flattened K × c patch per target.
pub fn neighborhood_operator(geometry: &Interpolator, targets: &[Point], stencil: &Stencil) -> Result<SparseRows> {
    contract!(!targets.is_empty(), "no target points for the neighbourhood operator");
    let mut rows = Vec::with_capacity(targets.len() * stencil.len());
    let mut offsets = Vec::with_capacity(rows.capacity());
    let mut any_constant = false;
    for x in targets {
        for o in stencil.offsets() {
            match geometry.weights([x[0] + o[0], x[1] + o[1]])? {
                QueryWeights::Nodes(w) => {
                    rows.push(w);
                    offsets.push(0.0);
                }
                QueryWeights::Constant(s) => {
                    rows.push(Vec::new());
                    offsets.push(s);
                    any_constant = true;
                }
            }
        }
    }
    SparseRows::from_rows(geometry.len(), rows, any_constant.then_some(offsets))
}

/// Stencil operator centred on the grid's own nodes.
pub fn node_neighborhood_operator(geometry: &Interpolator, stencil: &Stencil) -> Result<SparseRows> {
    let pts = geometry.grid().points().to_vec();
    neighborhood_operator(geometry, &pts, stencil)
}
