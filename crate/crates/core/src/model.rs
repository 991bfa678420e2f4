//! The full latent PDE model: encoder, Bayesian dynamics and decoder, and the ELBO.

use std::sync::Arc;

use crate::encoder::{encode, init_encoder, EncoderConfig, EncoderInput, EncoderVars};
use crate::error::{contract, Result};
use crate::latent_pde::{
    decode, dynamics_operator, solve, Decoder, DecoderConfig, Dynamics, DynamicsConfig, MlpVars, SolverConfig,
};
use crate::numcore::{
    reparam_sample, reparam_sample_log_std, standard_normal, BoundParams, Graph, ParamStore, Rng, SparseRows, Tensor,
    Var,
};
use crate::spatial::SpatialGrid;
use crate::variational::{gaussian_log_likelihood, kl_to_isotropic, ShootingPartition};

#[derive(Clone, Debug, PartialEq)]
pub struct PriorConfig {
    pub sigma_u: f64,
    pub sigma_c: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            sigma_u: 0.01,
            sigma_c: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub dynamics: DynamicsConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub solver: SolverConfig,
    pub prior: PriorConfig,
    /// Initial posterior std of every dynamics/decoder weight.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dynamics: DynamicsConfig::default(),
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            solver: SolverConfig::default(),
            prior: PriorConfig::default(),
            init_std: 9e-4,
        }
    }
}

impl ModelConfig {
    pub fn latent_dim(&self) -> usize {
        self.dynamics.latent_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.decoder.obs_dim
    }

    pub fn validate(&self) -> Result<()> {
        contract!(
            self.latent_dim() >= 1 && self.obs_dim() >= 1,
            "dimensions must be positive"
        );
        contract!(
            self.prior.sigma_u > 0.0 && self.prior.sigma_c > 0.0,
            "sigma_u and sigma_c must be positive"
        );
        contract!(self.init_std > 0.0, "init_std must be positive");
        self.encoder.validate()?;
        self.solver.validate()?;
        if self.decoder.mode == crate::latent_pde::DecoderMode::Selector {
            contract!(self.obs_dim() <= self.latent_dim(), "selector decoder needs D <= d");
        }
        Ok(())
    }
}

/// ELBO decomposition. `obs` is term (i); the KL terms are reported as positive numbers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ElboTerms {
    pub obs: f64,
    pub init_kl: f64,
    pub continuity: f64,
    pub dyn_kl: f64,
    pub dec_kl: f64,
    pub elbo: f64,
    /// `-elbo / (M N D)`.
    pub loss: f64,
}

/// Frozen reparameterisation noise for one ELBO evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboNoise {
    /// One tensor per Bayesian weight, in [`Model::bayes_shapes`] order.
    pub params: Vec<Tensor>,
    /// One `N x d` tensor per shooting block.
    pub states: Vec<Tensor>,
}

/// Model structure bound to a spatial grid.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    grid: SpatialGrid,
    op: Arc<SparseRows>,
}

impl Model {
    pub fn new(cfg: ModelConfig, grid: SpatialGrid) -> Result<Self> {
        cfg.validate()?;
        let op = dynamics_operator(&grid, &cfg.dynamics)?;
        Ok(Self { cfg, grid, op })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    /// Stencil operator over the grid nodes shared by the encoder and the dynamics.
    pub fn operator(&self) -> &Arc<SparseRows> {
        &self.op
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.len()
    }

    /// Names and shapes of the weights with Gaussian posteriors (`dyn.*`, then `dec.*`).
    pub fn bayes_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut push = |prefix: &str, spec: &crate::latent_pde::MlpSpec| {
            for (l, (w, b)) in spec.shapes().into_iter().enumerate() {
                out.push((format!("{prefix}.w{l}"), w.to_vec()));
                out.push((format!("{prefix}.b{l}"), vec![b]));
            }
        };
        push("dyn", &self.cfg.dynamics.mlp_spec());
        if let Some(spec) = self.cfg.decoder.mlp_spec(self.cfg.latent_dim()) {
            push("dec", &spec);
        }
        out
    }

    pub fn init_params(&self, rng: &mut Rng) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        let patch = self.cfg.dynamics.stencil.len() * self.cfg.obs_dim();
        init_encoder(&mut store, &self.cfg.encoder, patch, self.cfg.latent_dim(), rng)?;
        let log_std = self.cfg.init_std.ln();
        let mut add = |prefix: &str, spec: &crate::latent_pde::MlpSpec, rng: &mut Rng| -> Result<()> {
            let init = spec.init(rng)?;
            for (l, pair) in init.chunks(2).enumerate() {
                for (kind, t) in ["w", "b"].iter().zip(pair) {
                    let base = format!("{prefix}.{kind}{l}");
                    store.insert(&format!("{base}.mean"), t.clone())?;
                    store.insert(&format!("{base}.log_std"), Tensor::full(t.shape(), log_std))?;
                }
            }
            Ok(())
        };
        add("dyn", &self.cfg.dynamics.mlp_spec(), rng)?;
        if let Some(spec) = self.cfg.decoder.mlp_spec(self.cfg.latent_dim()) {
            add("dec", &spec, rng)?;
        }
        Ok(store)
    }

    /// Patches of an `M x N x D` observation block for the encoder.
    pub fn encoder_input(&self, obs: &[f64], times: &[f64]) -> Result<EncoderInput> {
        EncoderInput::new(&self.op, obs, times, self.cfg.obs_dim())
    }

    /// Standard normal noise for the weights and `n_blocks` shooting states.
    pub fn draw_noise(&self, n_blocks: usize, rng: &mut Rng) -> ElboNoise {
        let params = self.draw_weight_noise(rng);
        let states = (0..n_blocks).map(|_| self.draw_state_noise(rng)).collect();
        ElboNoise { params, states }
    }

    pub fn draw_weight_noise(&self, rng: &mut Rng) -> Vec<Tensor> {
        self.bayes_shapes()
            .iter()
            .map(|(_, s)| standard_normal(s, rng))
            .collect()
    }

    pub fn draw_state_noise(&self, rng: &mut Rng) -> Tensor {
        standard_normal(&[self.n_nodes(), self.cfg.latent_dim()], rng)
    }

    /// All-zero noise: every sample is the posterior mean.
    pub fn zero_noise(&self, n_blocks: usize) -> ElboNoise {
        ElboNoise {
            params: self.bayes_shapes().iter().map(|(_, s)| Tensor::zeros(s)).collect(),
            states: (0..n_blocks)
                .map(|_| Tensor::zeros(&[self.n_nodes(), self.cfg.latent_dim()]))
                .collect(),
        }
    }

    /// Samples dynamics and decoder weights; also returns their KL terms against N(0, I).
    pub fn sample_weights(
        &self,
        g: &mut Graph,
        params: &BoundParams,
        noise: &[Tensor],
    ) -> Result<(Dynamics, Decoder, Var, Option<Var>)> {
        let shapes = self.bayes_shapes();
        contract!(
            noise.len() == shapes.len(),
            "weight noise has {} tensors, expected {}",
            noise.len(),
            shapes.len()
        );
        let mut dyn_vars = Vec::new();
        let mut dec_vars = Vec::new();
        let mut dyn_kl = Vec::new();
        let mut dec_kl = Vec::new();
        for ((name, _), eps) in shapes.iter().zip(noise) {
            let mean = params.var(&format!("{name}.mean"))?;
            let log_std = params.var(&format!("{name}.log_std"))?;
            let w = reparam_sample_log_std(g, mean, log_std, eps)?;
            let kl = kl_to_isotropic(g, mean, log_std, None, 1.0)?;
            if name.starts_with("dyn.") {
                dyn_vars.push(w);
                dyn_kl.push((kl, 1.0));
            } else {
                dec_vars.push(w);
                dec_kl.push((kl, 1.0));
            }
        }
        let mlp = MlpVars::new(g, &self.cfg.dynamics.mlp_spec(), &dyn_vars)?;
        let dynamics = Dynamics::new(Arc::clone(&self.op), &self.cfg.dynamics, mlp)?;
        let decoder = match self.cfg.decoder.mlp_spec(self.cfg.latent_dim()) {
            None => Decoder::Selector {
                obs_dim: self.cfg.obs_dim(),
            },
            Some(spec) => Decoder::Mlp(MlpVars::new(g, &spec, &dec_vars)?),
        };
        let dyn_kl = g.lincomb(&dyn_kl)?;
        let dec_kl = if dec_kl.is_empty() {
            None
        } else {
            Some(g.lincomb(&dec_kl)?)
        };
        Ok((dynamics, decoder, dyn_kl, dec_kl))
    }

    /// Negative normalised ELBO of one trajectory (`obs`: `M x N x D`) as a graph scalar.
    pub fn elbo(
        &self,
        g: &mut Graph,
        params: &BoundParams,
        input: &EncoderInput,
        obs: &[f64],
        partition: &ShootingPartition,
        noise: &ElboNoise,
    ) -> Result<(Var, ElboTerms)> {
        let (n, d_obs) = (self.n_nodes(), self.cfg.obs_dim());
        let times = &input.times;
        let m = times.len();
        contract!(obs.len() == m * n * d_obs, "observation block has wrong size");
        contract!(
            noise.states.len() == partition.len(),
            "state noise for {} blocks, partition has {}",
            noise.states.len(),
            partition.len()
        );
        let (dynamics, decoder, dyn_kl, dec_kl) = self.sample_weights(g, params, &noise.params)?;
        let enc = EncoderVars::bind(params, &self.cfg.encoder)?;
        let q = encode(g, &enc, &self.cfg.encoder, input, &partition.anchors)?;
        let sigma = &self.cfg.prior;
        let mut obs_terms = Vec::with_capacity(partition.len());
        let mut cont_terms = Vec::new();
        let mut init_kl = None;
        let mut flow_end: Option<Var> = None;
        for (b, block) in partition.blocks.iter().enumerate() {
            let (mean, std) = q[b];
            let log_std = g.log(std);
            let s = reparam_sample(g, mean, std, &noise.states[b])?;
            match flow_end {
                None => init_kl = Some(kl_to_isotropic(g, mean, log_std, None, 1.0)?),
                Some(mu) => cont_terms.push((kl_to_isotropic(g, mean, log_std, Some(mu), sigma.sigma_c)?, 1.0)),
            }
            let t_anchor = times[partition.anchors[b]];
            let block_times: Vec<f64> = block.iter().map(|&i| times[i]).collect();
            let (states, _) =
                solve(g, &dynamics, s, t_anchor, &block_times, &self.cfg.solver).map_err(|e| e.in_block(b))?;
            let stacked = if states.len() == 1 {
                states[0]
            } else {
                g.concat_rows(&states)?
            };
            let pred = decode(g, &decoder, stacked)?;
            let (i0, i1) = (block[0], *block.last().expect("non-empty block"));
            let target = g.constant_vec(
                vec![block.len() * n, d_obs],
                obs[i0 * n * d_obs..(i1 + 1) * n * d_obs].to_vec(),
            );
            obs_terms.push((gaussian_log_likelihood(g, pred, target, sigma.sigma_u)?, 1.0));
            flow_end = Some(*states.last().expect("non-empty block"));
        }
        let obs_ll = g.lincomb(&obs_terms)?;
        let init_kl = init_kl.expect("at least one block");
        let mut elbo_terms = vec![(obs_ll, 1.0), (init_kl, -1.0), (dyn_kl, -1.0)];
        let continuity = if cont_terms.is_empty() {
            None
        } else {
            let c = g.lincomb(&cont_terms)?;
            elbo_terms.push((c, -1.0));
            Some(c)
        };
        if let Some(k) = dec_kl {
            elbo_terms.push((k, -1.0));
        }
        let scale = 1.0 / (m * n * d_obs) as f64;
        let elbo = g.lincomb(&elbo_terms)?;
        let loss = g.scale(elbo, -scale);
        let terms = ElboTerms {
            obs: g.scalar(obs_ll),
            init_kl: g.scalar(init_kl),
            continuity: continuity.map_or(0.0, |c| g.scalar(c)),
            dyn_kl: g.scalar(dyn_kl),
            dec_kl: dec_kl.map_or(0.0, |k| g.scalar(k)),
            elbo: g.scalar(elbo),
            loss: g.scalar(loss),
        };
        if !terms.loss.is_finite() {
            return Err(crate::Error::Numeric(format!("non-finite ELBO: {terms:?}")));
        }
        Ok((loss, terms))
    }
}
