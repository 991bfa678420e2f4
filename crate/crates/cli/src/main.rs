use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use lnpde::config::{format_kv, parse_kv, KeyValue};
use lnpde::datagen::{generator_config, make_dataset, SwConfig};
use lnpde::forecaster::{forecast, ForecastConfig};
use lnpde::formats::{Checkpoint, Dataset};
use lnpde::model::Model;
use lnpde::numcore::rng_from_seed;
use lnpde::trainer::{
    ablate, evaluate_mean, train_and_test, train_with, write_log_csv, AblationRow, TrainConfig, ABLATION_HEADER,
};

/// Latent neural PDE models for irregular spatiotemporal data.
#[derive(Parser)]
#[command(name = "lnpde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write train/val/test files.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint and a CSV log.
    Train(TrainArgs),
    /// Print the forecast MAE of a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Write posterior-predictive means and standard deviations.
    Forecast(ForecastArgs),
    /// Run the finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Train once per value of a key and write a CSV of the results.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct Overrides {
    /// File of key=value lines applied after the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// A key=value override applied last; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn apply(&self, target: &mut impl KeyValue) -> anyhow::Result<()> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            target.apply(&parse_kv(&text)?)?;
        }
        for kv in &self.set {
            let (k, v) = split_kv(kv)?;
            target.set(k, v).map_err(|e| anyhow::anyhow!("--set {kv}: {e}"))?;
        }
        Ok(())
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// desk-sw, full-sw or diffusion.
    #[arg(long, default_value = "full-sw")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// desk or full.
    #[arg(long, default_value = "full")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for checkpoint.lnpck, log.csv and config.txt.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset whose first observations are used as context.
    #[arg(long)]
    data: PathBuf,
    /// Dataset scored against, e.g. the noise-free test split; defaults to --data.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Defaults to the context length stored in the checkpoint.
    #[arg(long)]
    context: Option<usize>,
    /// Defaults to the validation seed of the checkpoint.
    #[arg(long)]
    seed: Option<u64>,
    /// Posterior samples averaged per trajectory; 1 reproduces validation scoring.
    #[arg(long, default_value_t = 1)]
    samples: usize,
}

#[derive(Args)]
struct ForecastArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    context: Option<usize>,
    #[arg(long, default_value_t = 10)]
    samples: usize,
    /// Add observation noise to every sample before averaging.
    #[arg(long)]
    observation_noise: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 2)]
    seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    /// Directory holding train.lnpde, val.lnpde, test.lnpde and optionally test_clean.lnpde.
    #[arg(long)]
    data: PathBuf,
    /// key=v1,v2,... over a training key, or a generator key such as noise_std.
    #[arg(long)]
    sweep: String,
    #[arg(long, default_value = "full")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

fn split_kv(s: &str) -> anyhow::Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .with_context(|| format!("expected KEY=VALUE, got '{s}'"))
}

fn load(path: &Path) -> anyhow::Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading {}", path.display()))
}

fn train_config(preset: &str, seed: Option<u64>, overrides: &Overrides) -> anyhow::Result<TrainConfig> {
    let mut cfg = TrainConfig::preset(preset)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    overrides.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn generate(a: &GenerateArgs) -> anyhow::Result<()> {
    let mut cfg = SwConfig::preset(&a.preset)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    a.overrides.apply(&mut cfg)?;
    let splits = make_dataset(&cfg)?;
    for w in &splits.warnings {
        eprintln!("warning: {w}");
    }
    for p in splits.write(&a.out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn train(a: &TrainArgs) -> anyhow::Result<()> {
    let cfg = train_config(&a.preset, a.seed, &a.overrides)?;
    let (tr, va) = (load(&a.train)?, load(&a.val)?);
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("config.txt"), format_kv(&cfg.pairs()))?;
    let out = train_with(&tr, &va, &cfg, |row| {
        if let Some(mae) = row.val_mae {
            println!(
                "iteration {} loss {:.6} val_mae {:.6} lr {:.3e}",
                row.iteration, row.terms.loss, mae, row.lr
            );
        }
    })?;
    write_log_csv(&out.log, &a.out.join("log.csv"))?;
    let ckpt = a.out.join("checkpoint.lnpck");
    out.best.save(&ckpt)?;
    println!(
        "best val_mae {} after {} iterations ({:.3} s/iteration); wrote {}",
        out.best.best_val_mae,
        cfg.iterations,
        out.seconds_per_iteration(),
        ckpt.display()
    );
    Ok(())
}

fn load_model(ckpt: &Path, data: &Dataset) -> anyhow::Result<(Checkpoint, Model)> {
    let ck = Checkpoint::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let model = Model::new(ck.config.model.clone(), data.grid()?)?;
    Ok((ck, model))
}

fn evaluate_cmd(a: &EvaluateArgs) -> anyhow::Result<()> {
    let data = load(&a.data)?;
    let truth = match &a.truth {
        Some(p) => load(p)?,
        None => data.clone(),
    };
    let (ck, model) = load_model(&a.ckpt, &data)?;
    let context = a.context.unwrap_or(ck.config.context);
    let seed = a.seed.unwrap_or(ck.config.val_seed());
    let r = evaluate_mean(&model, &ck.params, &data, &truth, context, a.samples, seed)?;
    println!(
        "mae={:?} std_err={:?} n_traj={}",
        r.mae,
        r.std_err(),
        r.per_trajectory.len()
    );
    Ok(())
}

fn forecast_cmd(a: &ForecastArgs) -> anyhow::Result<()> {
    let data = load(&a.data)?;
    let (ck, model) = load_model(&a.ckpt, &data)?;
    let context = a.context.unwrap_or(ck.config.context);
    if context == 0 || context >= data.n_times() {
        bail!("--context must lie in 1..{}", data.n_times());
    }
    let cfg = ForecastConfig {
        n_samples: a.samples,
        observation_noise: a.observation_noise,
    };
    let frame = data.frame_len();
    let targets = &data.times[context..];
    let mut rng = rng_from_seed(a.seed);
    let mut obs = Vec::with_capacity(data.n_traj * targets.len() * 2 * frame);
    let mut sigma_u = 0.0;
    for i in 0..data.n_traj {
        let ctx = &data.trajectory(i)[..context * frame];
        let f = forecast(&model, &ck.params, ctx, &data.times[..context], targets, &cfg, &mut rng)?;
        sigma_u = f.sigma_u;
        let d = data.obs_dim;
        for (mean, std) in f.mean.chunks(d).zip(f.std.chunks(d)) {
            obs.extend_from_slice(mean);
            obs.extend_from_slice(std);
        }
    }
    let mut meta = data.meta.clone();
    meta.insert("channels".into(), "mean,std".into());
    meta.insert("forecast.context".into(), context.to_string());
    meta.insert("forecast.samples".into(), a.samples.to_string());
    meta.insert("forecast.sigma_u".into(), format!("{sigma_u:?}"));
    let pred = Dataset {
        coords: data.coords.clone(),
        times: targets.to_vec(),
        obs,
        n_traj: data.n_traj,
        obs_dim: 2 * data.obs_dim,
        domain: data.domain,
        meta,
    };
    pred.save(&a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> anyhow::Result<bool> {
    let mut ok = true;
    for r in lnpde::gradcheck::suite(a.seed)? {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {} params={} max_rel_error={:.3e} tolerance={:.0e}",
            r.name, r.n_params, r.max_rel_error, r.tolerance
        );
        ok &= r.passed();
    }
    Ok(ok)
}

fn ablate_cmd(a: &AblateArgs) -> anyhow::Result<()> {
    let base = train_config(&a.preset, a.seed, &a.overrides)?;
    let (key, list) = split_kv(&a.sweep)?;
    let values: Vec<String> = list.split(',').map(|v| v.trim().to_string()).collect();
    let dir = &a.data;
    let tr = load(&dir.join("train.lnpde"))?;
    let regenerate = SwConfig::default().set(key, &values[0]).is_ok();
    let rows: Vec<AblationRow> = if regenerate {
        let gen = generator_config(&tr)?;
        let mut rows = Vec::new();
        for v in &values {
            let mut g = gen.clone();
            g.set(key, v)?;
            let s = make_dataset(&g)?;
            let truth = s.test_clean.as_ref().unwrap_or(&s.test);
            let (out, test) = train_and_test(&base, &s.train, &s.val, &s.test, truth)?;
            let row = AblationRow {
                key: key.to_string(),
                value: v.clone(),
                val_mae: out.best.best_val_mae,
                test_mae: test.mae,
                seconds_per_iteration: out.seconds_per_iteration(),
            };
            eprintln!("{}", row.csv());
            rows.push(row);
        }
        rows
    } else {
        let va = load(&dir.join("val.lnpde"))?;
        let te = load(&dir.join("test.lnpde"))?;
        let clean = dir.join("test_clean.lnpde");
        let truth = if clean.exists() { load(&clean)? } else { te.clone() };
        ablate(&base, key, &values, &tr, &va, &te, &truth)?
    };
    let mut csv = format!("{ABLATION_HEADER}\n");
    for r in &rows {
        csv.push_str(&r.csv());
        csv.push('\n');
    }
    match &a.out {
        Some(p) => {
            std::fs::write(p, csv)?;
            println!("{}", p.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

/// 1 for bad usage or configuration, 2 for data and format problems, 3 for numeric failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<lnpde::Error>().map(lnpde::Error::root) {
        Some(lnpde::Error::Format(_) | lnpde::Error::Io(_) | lnpde::Error::Geometry(_)) => 2,
        Some(lnpde::Error::Numeric(_) | lnpde::Error::Solver(_) | lnpde::Error::LossDivergence(_)) => 3,
        Some(_) => 1,
        None if err.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 1,
    }
}

fn set_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("LNPDE_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("LNPDE_THREADS must be a count, got '{v}'"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    set_threads()?;
    match &cli.command {
        Command::Generate(a) => generate(a)?,
        Command::Train(a) => train(a)?,
        Command::Evaluate(a) => evaluate_cmd(a)?,
        Command::Forecast(a) => forecast_cmd(a)?,
        Command::Gradcheck(a) => return gradcheck(a),
        Command::Ablate(a) => ablate_cmd(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
