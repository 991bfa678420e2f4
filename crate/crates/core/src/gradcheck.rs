//! Finite-difference checks of tape gradients on small frozen-noise instances.

use rand::Rng as _;

use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::latent_pde::{DynamicsConfig, MlpSpec, SolverConfig};
use crate::model::{Model, ModelConfig, PriorConfig};
use crate::numcore::{rng_from_seed, standard_normal, Activation, Graph, ParamStore};
use crate::oracles::{fd_gradient, max_relative_error};
use crate::spatial::{Domain, Point, SpatialGrid};
use crate::variational::make_partition;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub n_params: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

fn flatten(store: &ParamStore) -> Vec<f64> {
    store.entries().iter().flat_map(|e| e.value.data().to_vec()).collect()
}

fn unflatten(store: &mut ParamStore, theta: &[f64]) {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut at = 0;
    for name in names {
        let t = store.get_mut(&name).expect("name listed by the store");
        let n = t.len();
        t.data_mut().copy_from_slice(&theta[at..at + n]);
        at += n;
    }
}

/// Compares the tape gradient of `loss` at `store` with central differences.
fn compare<F>(name: &str, store: &ParamStore, tolerance: f64, loss: F) -> Result<CheckResult>
where
    F: Fn(&mut Graph, &crate::numcore::BoundParams) -> Result<crate::numcore::Var>,
{
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let root = loss(&mut g, &bound)?;
    let grads = bound.collect(&g.backward(root)?);
    let tape: Vec<f64> = store.entries().iter().flat_map(|e| grads[&e.name].clone()).collect();

    let theta = flatten(store);
    let mut probe = store.clone();
    let mut failure = None;
    let fd = fd_gradient(
        |th| {
            unflatten(&mut probe, th);
            let mut g = Graph::new();
            let bound = probe.bind(&mut g);
            match loss(&mut g, &bound) {
                Ok(v) => g.scalar(v),
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &theta,
        1e-6,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let scale = tape.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    Ok(CheckResult {
        name: name.to_string(),
        n_params: theta.len(),
        max_rel_error: max_relative_error(&tape, &fd, 1e-6 * scale),
        tolerance,
    })
}

/// The tiny model used by the ELBO check: `d = 2`, one hidden layer of 5, two attention layers.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        dynamics: DynamicsConfig {
            hidden: vec![5],
            latent_dim: 2,
            ..Default::default()
        },
        encoder: EncoderConfig {
            embed: 4,
            layers: 2,
            heads: 2,
            delta_t: 0.3,
            n_freq: 2,
        },
        solver: SolverConfig {
            rtol: 1e-11,
            atol: 1e-13,
            ..Default::default()
        },
        prior: PriorConfig {
            sigma_u: 0.1,
            sigma_c: 0.1,
        },
        ..Default::default()
    }
}

/// Full `-ELBO` gradient with N = 12 nodes, M = 6 times and two shooting blocks.
///
/// All posterior log-stds are set to -2 so that their gradients are not negligible.
pub fn elbo_check(seed: u64) -> Result<CheckResult> {
    let (n, m) = (12, 6);
    let mut rng = rng_from_seed(seed);
    let pts: Vec<Point> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
    let model = Model::new(tiny_model_config(), SpatialGrid::new(pts, Domain::unit_periodic())?)?;
    let mut store = model.init_params(&mut rng)?;
    for name in store.names().map(str::to_string).collect::<Vec<_>>() {
        if name.ends_with(".log_std") {
            store.get_mut(&name).expect("listed").data_mut().fill(-2.0);
        }
    }
    let times: Vec<f64> = (0..m).map(|i| 0.04 * i as f64 + 0.01 * (i % 2) as f64).collect();
    let obs: Vec<f64> = standard_normal(&[m * n], &mut rng)
        .data()
        .iter()
        .map(|v| 0.1 * v)
        .collect();
    let input = model.encoder_input(&obs, &times)?;
    let part = make_partition(&times, 3)?;
    let noise = model.draw_noise(part.len(), &mut rng);
    compare("elbo", &store, 1e-4, |g, bound| {
        Ok(model.elbo(g, bound, &input, &obs, &part, &noise)?.0)
    })
}

/// Sum of a random three-layer tanh network over a batch, w.r.t. all weights.
pub fn mlp_check(seed: u64) -> Result<CheckResult> {
    let mut rng = rng_from_seed(seed);
    let spec = MlpSpec::new(6, &[8, 8], 2, Activation::Tanh);
    let mut store = ParamStore::new();
    for (i, t) in spec.init(&mut rng)?.into_iter().enumerate() {
        store.insert(&format!("p{i}"), t)?;
    }
    for name in store.names().map(str::to_string).collect::<Vec<_>>() {
        let t = store.get_mut(&name).expect("listed");
        let noise = standard_normal(t.shape(), &mut rng);
        t.data_mut()
            .iter_mut()
            .zip(noise.data())
            .for_each(|(v, e)| *v += 0.1 * e);
    }
    let x = standard_normal(&[5, 6], &mut rng);
    compare("mlp", &store, 1e-6, |g, bound| {
        let vars: Vec<_> = (0..2 * spec.n_layers())
            .map(|i| bound.var(&format!("p{i}")))
            .collect::<Result<_>>()?;
        let mlp = crate::latent_pde::MlpVars::new(g, &spec, &vars)?;
        let xv = g.constant(&x);
        let y = mlp.forward(g, xv)?;
        let sq = g.square(y);
        Ok(g.sum(sq))
    })
}

/// Every check, in a fixed order.
pub fn suite(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![mlp_check(seed)?, elbo_check(seed)?])
}
