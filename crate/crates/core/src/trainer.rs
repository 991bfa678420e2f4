//! Training loop with warmup, best-validation snapshots, MAE evaluation and sweeps.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;

use crate::config::{float, parse_value, KeyValue};
use crate::encoder::EncoderInput;
use crate::error::{contract, Error, Result};
use crate::forecaster::{forecast, ForecastConfig};
use crate::formats::{Checkpoint, Dataset};
use crate::model::{ElboTerms, Model, ModelConfig};
use crate::numcore::{clip_global_norm, rng_from_seed, GradMap, Graph, ParamStore, Rng};
use crate::variational::make_partition;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub iterations: usize,
    pub lr: f64,
    pub warmup: usize,
    /// Trajectories per iteration; their losses are averaged.
    pub batch_size: usize,
    pub block_len: usize,
    pub seed: u64,
    pub eval_interval: usize,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Observations used to infer the latent state when validating.
    pub context: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            iterations: 20_000,
            lr: 3e-4,
            warmup: 200,
            batch_size: 1,
            block_len: 6,
            seed: 0,
            eval_interval: 100,
            clip_norm: Some(10.0),
            context: 5,
        }
    }
}

impl TrainConfig {
    /// Scaled-down shallow-water setup that trains on a CPU.
    pub fn desk() -> Self {
        let mut cfg = Self {
            iterations: 3000,
            block_len: 5,
            ..Self::default()
        };
        cfg.model.encoder.layers = 2;
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" | "desk-sw" => Ok(Self::desk()),
            "full" | "full-sw" => Ok(Self::default()),
            _ => Err(Error::Contract(format!("unknown training preset '{name}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        contract!(self.lr > 0.0 && self.lr.is_finite(), "learning rate must be positive");
        contract!(
            self.batch_size >= 1 && self.block_len >= 1 && self.eval_interval >= 1 && self.context >= 1,
            "batch_size, block_len, eval_interval and context must be positive"
        );
        if let Some(c) = self.clip_norm {
            contract!(c > 0.0, "clip_norm must be positive");
        }
        self.model.validate()
    }

    /// `lr * min(1, iteration / warmup)` for the 1-based update index.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        if self.warmup == 0 {
            return self.lr;
        }
        self.lr * (iteration as f64 / self.warmup as f64).min(1.0)
    }

    pub fn val_seed(&self) -> u64 {
        self.seed ^ 0x5eed_0f_7a11
    }
}

impl KeyValue for TrainConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "iterations" => self.iterations = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "warmup" => self.warmup = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "block_len" => self.block_len = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "eval_interval" => self.eval_interval = parse_value(key, value)?,
            "clip_norm" => {
                self.clip_norm = match value {
                    "none" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "context" => self.context = parse_value(key, value)?,
            _ => self.model.set(key, value)?,
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = [
            ("iterations", self.iterations.to_string()),
            ("lr", float(self.lr)),
            ("warmup", self.warmup.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("block_len", self.block_len.to_string()),
            ("seed", self.seed.to_string()),
            ("eval_interval", self.eval_interval.to_string()),
            ("clip_norm", self.clip_norm.map_or("none".to_string(), float)),
            ("context", self.context.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        out.extend(self.model.pairs());
        out
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub terms: ElboTerms,
    pub lr: f64,
    pub grad_norm: f64,
    pub val_mae: Option<f64>,
}

pub const LOG_HEADER: &str = "iteration,elbo,obs_loglik,init_kl,continuity_kl,dyn_kl,dec_kl,lr,val_mae";

impl LogRow {
    pub fn csv(&self) -> String {
        let t = &self.terms;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.iteration,
            float(t.elbo),
            float(t.obs),
            float(t.init_kl),
            float(t.continuity),
            float(t.dyn_kl),
            float(t.dec_kl),
            float(self.lr),
            self.val_mae.map_or(String::new(), float)
        )
    }
}

pub fn write_log_csv(rows: &[LogRow], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{LOG_HEADER}")?;
    for r in rows {
        writeln!(f, "{}", r.csv())?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation MAE.
    pub best: Checkpoint,
    /// Parameters after the last iteration.
    pub last: ParamStore,
    pub log: Vec<LogRow>,
    pub seconds: f64,
}

impl TrainOutcome {
    pub fn seconds_per_iteration(&self) -> f64 {
        self.seconds / self.log.len().max(1) as f64
    }
}

fn check_shared_design(a: &Dataset, b: &Dataset) -> Result<()> {
    contract!(
        a.coords == b.coords && a.times == b.times && a.obs_dim == b.obs_dim,
        "training and validation sets must share coordinates, times and D"
    );
    Ok(())
}

pub fn train(train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(train_set, val_set, cfg, |_| {})
}

/// [`train`] that reports every log row to `observe` as it is produced.
pub fn train_with(
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    contract!(train_set.n_traj >= 1, "training set is empty");
    contract!(
        train_set.obs_dim == cfg.model.obs_dim(),
        "dataset has D={} but the decoder emits {}",
        train_set.obs_dim,
        cfg.model.obs_dim()
    );
    check_shared_design(train_set, val_set)?;
    let model = Model::new(cfg.model.clone(), train_set.grid()?)?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut store = model.init_params(&mut rng)?;
    let partition = make_partition(&train_set.times, cfg.block_len)?;
    let inputs: Vec<EncoderInput> = (0..train_set.n_traj)
        .map(|i| model.encoder_input(train_set.trajectory(i), &train_set.times))
        .collect::<Result<_>>()?;

    let mut best = store.clone();
    let mut best_mae = f64::NAN;
    let mut log = Vec::with_capacity(cfg.iterations);
    let start = Instant::now();
    for it in 1..=cfg.iterations {
        let lr = cfg.lr_at(it);
        let (terms, mut grads) = batch_gradient(&model, &store, train_set, &inputs, &partition, cfg, &mut rng)
            .map_err(|e| e.at_iteration(it))?;
        let grad_norm = match cfg.clip_norm {
            Some(c) => clip_global_norm(&mut grads, c),
            None => clip_global_norm(&mut grads, f64::INFINITY),
        };
        if !grad_norm.is_finite() {
            return Err(Error::LossDivergence(format!("non-finite gradient norm; terms {terms:?}")).at_iteration(it));
        }
        store.adam_step(&grads, lr)?;
        let val_mae = if it % cfg.eval_interval == 0 || it == cfg.iterations {
            let mae = validate(&model, &store, val_set, cfg.context, cfg.val_seed()).map_err(|e| e.at_iteration(it))?;
            if !(mae >= best_mae) {
                best_mae = mae;
                best = store.clone();
            }
            Some(mae)
        } else {
            None
        };
        let row = LogRow {
            iteration: it,
            terms,
            lr,
            grad_norm,
            val_mae,
        };
        observe(&row);
        log.push(row);
    }
    Ok(TrainOutcome {
        best: Checkpoint {
            config: cfg.clone(),
            iteration: cfg.iterations,
            best_val_mae: best_mae,
            rng,
            params: best,
        },
        last: store,
        log,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Averaged `-ELBO` gradient over `cfg.batch_size` randomly drawn trajectories.
fn batch_gradient(
    model: &Model,
    store: &ParamStore,
    data: &Dataset,
    inputs: &[EncoderInput],
    partition: &crate::variational::ShootingPartition,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(ElboTerms, GradMap)> {
    let mut acc: Option<(ElboTerms, GradMap)> = None;
    let w = 1.0 / cfg.batch_size as f64;
    for _ in 0..cfg.batch_size {
        let idx = rng.random_range(0..data.n_traj);
        let noise = model.draw_noise(partition.len(), rng);
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let (loss, terms) = match model.elbo(&mut g, &bound, &inputs[idx], data.trajectory(idx), partition, &noise) {
            Err(Error::Numeric(msg)) => return Err(Error::LossDivergence(msg)),
            r => r?,
        };
        let grads = bound.collect(&g.backward(loss)?);
        acc = Some(match acc {
            None => (scale_terms(terms, w), scale_grads(grads, w)),
            Some((t, mut gsum)) => {
                for (k, v) in grads {
                    let dst = gsum.get_mut(&k).expect("same parameter names");
                    dst.iter_mut().zip(v).for_each(|(a, b)| *a += w * b);
                }
                (add_terms(t, scale_terms(terms, w)), gsum)
            }
        });
    }
    Ok(acc.expect("batch_size >= 1"))
}

fn scale_grads(mut g: GradMap, w: f64) -> GradMap {
    if w != 1.0 {
        g.values_mut().for_each(|v| v.iter_mut().for_each(|x| *x *= w));
    }
    g
}

fn scale_terms(t: ElboTerms, w: f64) -> ElboTerms {
    ElboTerms {
        obs: t.obs * w,
        init_kl: t.init_kl * w,
        continuity: t.continuity * w,
        dyn_kl: t.dyn_kl * w,
        dec_kl: t.dec_kl * w,
        elbo: t.elbo * w,
        loss: t.loss * w,
    }
}

fn add_terms(a: ElboTerms, b: ElboTerms) -> ElboTerms {
    ElboTerms {
        obs: a.obs + b.obs,
        init_kl: a.init_kl + b.init_kl,
        continuity: a.continuity + b.continuity,
        dyn_kl: a.dyn_kl + b.dyn_kl,
        dec_kl: a.dec_kl + b.dec_kl,
        elbo: a.elbo + b.elbo,
        loss: a.loss + b.loss,
    }
}

/// Mean absolute error over all remaining points, and per trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct MaeReport {
    pub mae: f64,
    pub per_trajectory: Vec<f64>,
}

impl MaeReport {
    /// Standard error of the per-trajectory MAEs.
    pub fn std_err(&self) -> f64 {
        let n = self.per_trajectory.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        let m = self.per_trajectory.iter().sum::<f64>() / n;
        let var = self.per_trajectory.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }
}

/// Scores `predict(i, context, context_times, targets)` (returning `targets.len() x N x D`
/// values) against `truth` at every time after the first `context` points.
pub fn mae_with<P>(context_set: &Dataset, truth: &Dataset, context: usize, predict: P) -> Result<MaeReport>
where
    P: Fn(usize, &[f64], &[f64], &[f64]) -> Result<Vec<f64>> + Sync,
{
    check_shared_design(context_set, truth)?;
    contract!(
        context_set.n_traj == truth.n_traj,
        "context and truth sets differ in size"
    );
    let m = context_set.n_times();
    contract!(context >= 1 && context < m, "context {context} must lie in 1..{m}");
    let frame = context_set.frame_len();
    let targets = &context_set.times[context..];
    let sums: Vec<(f64, usize)> = (0..context_set.n_traj)
        .into_par_iter()
        .map(|i| {
            let ctx = &context_set.trajectory(i)[..context * frame];
            let pred = predict(i, ctx, &context_set.times[..context], targets)?;
            let want = &truth.trajectory(i)[context * frame..];
            contract!(
                pred.len() == want.len(),
                "prediction has {} values, expected {}",
                pred.len(),
                want.len()
            );
            Ok((pred.iter().zip(want).map(|(p, t)| (p - t).abs()).sum(), want.len()))
        })
        .collect::<Result<_>>()?;
    let total: f64 = sums.iter().map(|s| s.0).sum();
    let count: usize = sums.iter().map(|s| s.1).sum();
    Ok(MaeReport {
        mae: total / count as f64,
        per_trajectory: sums.iter().map(|(s, n)| s / *n as f64).collect(),
    })
}

/// Forecast MAE with one posterior sample per trajectory, the generator for trajectory `i` seeded by `seed + i`.
pub fn evaluate(
    model: &Model,
    store: &ParamStore,
    context_set: &Dataset,
    truth: &Dataset,
    context: usize,
    seed: u64,
) -> Result<MaeReport> {
    evaluate_mean(model, store, context_set, truth, context, 1, seed)
}

/// Forecast MAE of the posterior-predictive mean estimated from `n_samples` samples per trajectory.
pub fn evaluate_mean(
    model: &Model,
    store: &ParamStore,
    context_set: &Dataset,
    truth: &Dataset,
    context: usize,
    n_samples: usize,
    seed: u64,
) -> Result<MaeReport> {
    let fc = ForecastConfig {
        n_samples,
        observation_noise: false,
    };
    mae_with(context_set, truth, context, |i, ctx, ctx_t, targets| {
        let mut rng = rng_from_seed(seed.wrapping_add(i as u64));
        Ok(forecast(model, store, ctx, ctx_t, targets, &fc, &mut rng)?.mean)
    })
}

pub fn validate(model: &Model, store: &ParamStore, data: &Dataset, context: usize, seed: u64) -> Result<f64> {
    Ok(evaluate(model, store, data, data, context, seed)?.mae)
}

/// MAE of repeating the last context frame, through the same scoring path as [`evaluate`].
pub fn persistence_mae(context_set: &Dataset, truth: &Dataset, context: usize) -> Result<MaeReport> {
    let frame = context_set.frame_len();
    mae_with(context_set, truth, context, |_, ctx, _, targets| {
        let last = &ctx[ctx.len() - frame..];
        Ok(last.repeat(targets.len()))
    })
}

/// Result of training once per value of a swept key.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub key: String,
    pub value: String,
    pub val_mae: f64,
    pub test_mae: f64,
    pub seconds_per_iteration: f64,
}

pub const ABLATION_HEADER: &str = "key,value,val_mae,test_mae,seconds_per_iteration";

impl AblationRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.key,
            self.value,
            float(self.val_mae),
            float(self.test_mae),
            float(self.seconds_per_iteration)
        )
    }
}

/// Posterior samples averaged per trajectory when scoring on a test set.
pub const TEST_SAMPLES: usize = 10;

/// Trains on `train_set` and scores the posterior-predictive mean of the best-validation snapshot
/// on `test_set` against `test_truth`.
pub fn train_and_test(
    cfg: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    test_set: &Dataset,
    test_truth: &Dataset,
) -> Result<(TrainOutcome, MaeReport)> {
    let out = train(train_set, val_set, cfg)?;
    let model = Model::new(cfg.model.clone(), test_set.grid()?)?;
    let test = evaluate_mean(
        &model,
        &out.best.params,
        test_set,
        test_truth,
        cfg.context,
        TEST_SAMPLES,
        cfg.val_seed(),
    )?;
    Ok((out, test))
}

/// Trains `base` with `key` set to each of `values` and scores the best snapshot on `test`.
pub fn ablate(
    base: &TrainConfig,
    key: &str,
    values: &[String],
    train_set: &Dataset,
    val_set: &Dataset,
    test_set: &Dataset,
    test_truth: &Dataset,
) -> Result<Vec<AblationRow>> {
    values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            cfg.set(key, v)?;
            let (out, test) = train_and_test(&cfg, train_set, val_set, test_set, test_truth)?;
            Ok(AblationRow {
                key: key.to_string(),
                value: v.clone(),
                val_mae: out.best.best_val_mae,
                test_mae: test.mae,
                seconds_per_iteration: out.seconds_per_iteration(),
            })
        })
        .collect()
}
