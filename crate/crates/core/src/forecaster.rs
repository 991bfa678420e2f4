//! Posterior-predictive forecasts by Monte-Carlo averaging over posterior samples.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::encoder::{encode, EncoderInput, EncoderVars};
use crate::error::{contract, Result};
use crate::latent_pde::{decode, solve_detached};
use crate::model::Model;
use crate::numcore::{reparam_sample, rng_from_seed, Graph, ParamStore, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastConfig {
    pub n_samples: usize,
    /// Add `N(0, sigma_u^2)` observation noise to every decoded sample before averaging.
    pub observation_noise: bool,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            n_samples: 10,
            observation_noise: false,
        }
    }
}

/// Elementwise predictive mean and standard deviation, each `T x N x D`.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// The observation noise std of the model, reported alongside the predictive std.
    pub sigma_u: f64,
}

/// One posterior sample rolled out from the last context time to every target time.
///
/// `input` holds the context only; its last time point is the anchor.
pub fn sample_rollout(
    model: &Model,
    store: &ParamStore,
    input: &EncoderInput,
    targets: &[f64],
    observation_noise: bool,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let m = input.times.len();
    contract!(m >= 1, "forecast needs at least one context frame");
    let t_m = input.times[m - 1];
    contract!(
        targets.iter().all(|&t| t >= t_m),
        "target times must not precede the last context time {t_m}"
    );
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let weight_noise = model.draw_weight_noise(rng);
    let (dynamics, decoder, _, _) = model.sample_weights(&mut g, &bound, &weight_noise)?;
    let vars = EncoderVars::bind(&bound, &model.cfg.encoder)?;
    let q = encode(&mut g, &vars, &model.cfg.encoder, input, &[m - 1])?;
    let eps = model.draw_state_noise(rng);
    let s = reparam_sample(&mut g, q[0].0, q[0].1, &eps)?;
    let s = g.tensor(s);
    let (states, _) = solve_detached(&mut g, &dynamics, &s, t_m, targets, &model.cfg.solver)?;
    let sigma_u = model.cfg.prior.sigma_u;
    let mut out = Vec::with_capacity(targets.len() * model.n_nodes() * model.cfg.obs_dim());
    for z in &states {
        let mark = g.len();
        let zv = g.constant(z);
        let u = decode(&mut g, &decoder, zv)?;
        out.extend_from_slice(g.value(u));
        g.truncate(mark);
    }
    if observation_noise {
        for v in &mut out {
            *v += sigma_u * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(out)
}

/// Averages `cfg.n_samples` posterior rollouts from the context `obs` (`m x N x D`).
///
/// Samples run concurrently, each with its own generator seeded from `rng`,
/// and are reduced in sample order, so the result does not depend on the thread count.
pub fn forecast(
    model: &Model,
    store: &ParamStore,
    context_obs: &[f64],
    context_times: &[f64],
    targets: &[f64],
    cfg: &ForecastConfig,
    rng: &mut Rng,
) -> Result<Forecast> {
    contract!(cfg.n_samples >= 1, "n_samples must be at least 1");
    let input = model.encoder_input(context_obs, context_times)?;
    let seeds: Vec<u64> = (0..cfg.n_samples).map(|_| rng.random()).collect();
    let samples: Vec<Vec<f64>> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            sample_rollout(
                model,
                store,
                &input,
                targets,
                cfg.observation_noise,
                &mut rng_from_seed(seed),
            )
            .map_err(|e| e.in_sample(i))
        })
        .collect::<Result<_>>()?;
    let len = samples[0].len();
    let n = cfg.n_samples as f64;
    let mut mean = vec![0.0; len];
    for s in &samples {
        mean.iter_mut().zip(s).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; len];
    for s in &samples {
        var.iter_mut()
            .zip(s)
            .zip(&mean)
            .for_each(|((acc, v), m)| *acc += (v - m) * (v - m));
    }
    let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
    Ok(Forecast {
        times: targets.to_vec(),
        mean,
        std,
        sigma_u: model.cfg.prior.sigma_u,
    })
}
