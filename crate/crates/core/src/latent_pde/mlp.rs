use crate::error::{contract, Result};
use crate::numcore::{xavier_init, Activation, Graph, Rng, Tensor, Var};

/// Layer widths `[in, hidden.., out]` and the hidden activation. The output layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize, activation: Activation) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        Self { widths, activation }
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// `(weight shape, bias shape)` per layer.
    pub fn shapes(&self) -> Vec<([usize; 2], usize)> {
        self.widths.windows(2).map(|w| ([w[0], w[1]], w[1])).collect()
    }

    /// Xavier weights, zero biases, interleaved `w0, b0, w1, b1, ..`.
    pub fn init(&self, rng: &mut Rng) -> Result<Vec<Tensor>> {
        let mut out = Vec::new();
        for (w, b) in self.shapes() {
            out.push(xavier_init(&w, rng)?);
            out.push(Tensor::zeros(&[b]));
        }
        Ok(out)
    }
}

/// An MLP whose weights live on a graph.
#[derive(Clone, Debug)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
    activation: Activation,
}

impl MlpVars {
    /// `vars` is interleaved `w0, b0, w1, b1, ..` as produced by [`MlpSpec::init`].
    pub fn new(g: &Graph, spec: &MlpSpec, vars: &[Var]) -> Result<Self> {
        contract!(
            vars.len() == 2 * spec.n_layers(),
            "expected {} tensors for the MLP, got {}",
            2 * spec.n_layers(),
            vars.len()
        );
        for (l, (w, b)) in spec.shapes().into_iter().enumerate() {
            contract!(
                g.shape(vars[2 * l]) == w && g.shape(vars[2 * l + 1]) == [b],
                "layer {l} has shapes {:?}/{:?}, expected {w:?}/[{b}]",
                g.shape(vars[2 * l]),
                g.shape(vars[2 * l + 1])
            );
        }
        Ok(Self {
            layers: vars.chunks(2).map(|c| (c[0], c[1])).collect(),
            activation: spec.activation,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let act = if l == last {
                Activation::Identity
            } else {
                self.activation
            };
            h = g.dense(h, w, Some(b), act)?;
        }
        Ok(h)
    }
}
