//! Synthetic datasets: shallow water on the periodic unit square, observed through
//! the wave height at shared random locations and times, and a heat-equation
//! dataset with an exact spectral solution.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::{float, parse_value, KeyValue};
use crate::error::{contract, Error, Result};
use crate::formats::Dataset;
use crate::numcore::{rng_from_seed, Rng};
use crate::spatial::{Domain, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    ShallowWater,
    Diffusion,
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Generator::ShallowWater => "shallow_water",
            Generator::Diffusion => "diffusion2d",
        })
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shallow_water" => Ok(Generator::ShallowWater),
            "diffusion2d" => Ok(Generator::Diffusion),
            _ => Err(Error::Contract(format!("unknown generator '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwConfig {
    pub generator: Generator,
    /// Cells per axis of the regular solver grid.
    pub resolution: usize,
    pub gravity: f64,
    /// Diffusivity of the heat-equation generator.
    pub kappa: f64,
    pub t_final: f64,
    pub n_modes: usize,
    pub cfl: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_points: usize,
    pub n_times: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SwConfig {
    fn default() -> Self {
        Self {
            generator: Generator::ShallowWater,
            resolution: 64,
            gravity: 1.0,
            kappa: 0.01,
            t_final: 0.1,
            n_modes: 3,
            cfl: 0.5,
            n_train: 60,
            n_val: 20,
            n_test: 20,
            n_points: 1089,
            n_times: 25,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

impl SwConfig {
    /// Small shallow-water preset that trains on a laptop.
    pub fn desk() -> Self {
        Self {
            resolution: 48,
            n_train: 16,
            n_val: 4,
            n_test: 4,
            n_points: 256,
            n_times: 15,
            ..Self::default()
        }
    }

    /// Heat-equation dataset for quick end-to-end checks.
    pub fn diffusion() -> Self {
        Self {
            generator: Generator::Diffusion,
            t_final: 1.0,
            n_train: 8,
            n_val: 2,
            n_test: 2,
            n_points: 64,
            n_times: 10,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk-sw" => Ok(Self::desk()),
            "full-sw" => Ok(Self::default()),
            "diffusion" => Ok(Self::diffusion()),
            _ => Err(Error::Contract(format!(
                "unknown preset '{name}' (expected desk-sw, full-sw or diffusion)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        contract!(self.resolution >= 16, "solver resolution must be at least 16");
        contract!(self.t_final > 0.0, "final time must be positive");
        contract!(
            self.gravity > 0.0 && self.kappa > 0.0,
            "gravity and kappa must be positive"
        );
        contract!(self.cfl > 0.0 && self.cfl <= 4.0, "cfl must lie in (0, 4]");
        contract!(self.n_modes >= 1, "need at least one Fourier mode");
        contract!(
            self.n_points >= 1 && self.n_times >= 2,
            "need points and at least two times"
        );
        contract!(
            self.n_train + self.n_val + self.n_test >= 1,
            "no trajectories requested"
        );
        contract!(self.noise_std >= 0.0, "noise std must be non-negative");
        Ok(())
    }

    fn total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }
}

impl KeyValue for SwConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "generator" => self.generator = parse_value(key, value)?,
            "resolution" => self.resolution = parse_value(key, value)?,
            "gravity" => self.gravity = parse_value(key, value)?,
            "kappa" => self.kappa = parse_value(key, value)?,
            "t_final" => self.t_final = parse_value(key, value)?,
            "n_modes" => self.n_modes = parse_value(key, value)?,
            "cfl" => self.cfl = parse_value(key, value)?,
            "n_train" => self.n_train = parse_value(key, value)?,
            "n_val" => self.n_val = parse_value(key, value)?,
            "n_test" => self.n_test = parse_value(key, value)?,
            "n_points" => self.n_points = parse_value(key, value)?,
            "n_times" => self.n_times = parse_value(key, value)?,
            "noise_std" => self.noise_std = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Err(Error::Format(format!("unknown key {key}"))),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(String, String)> {
        [
            ("generator", self.generator.to_string()),
            ("resolution", self.resolution.to_string()),
            ("gravity", float(self.gravity)),
            ("kappa", float(self.kappa)),
            ("t_final", float(self.t_final)),
            ("n_modes", self.n_modes.to_string()),
            ("cfl", float(self.cfl)),
            ("n_train", self.n_train.to_string()),
            ("n_val", self.n_val.to_string()),
            ("n_test", self.n_test.to_string()),
            ("n_points", self.n_points.to_string()),
            ("n_times", self.n_times.to_string()),
            ("noise_std", float(self.noise_std)),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Random Fourier sum `sum_{k,l=-n..n} lambda_kl cos(2 pi (k x + l y)) + gamma_kl sin(...)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierField {
    pub n_modes: usize,
    /// `(2n+1)^2` coefficients, index `(k + n) * (2n + 1) + (l + n)`.
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl FourierField {
    pub fn random(n_modes: usize, rng: &mut Rng) -> Self {
        let len = (2 * n_modes + 1).pow(2);
        let mut draw = || (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let lambda = draw();
        let gamma = draw();
        Self { n_modes, lambda, gamma }
    }

    fn modes(&self) -> impl Iterator<Item = (f64, f64, f64, f64)> + '_ {
        let n = self.n_modes as i64;
        let w = 2 * n + 1;
        (-n..=n).flat_map(move |k| {
            (-n..=n).map(move |l| {
                let i = ((k + n) * w + (l + n)) as usize;
                (k as f64, l as f64, self.lambda[i], self.gamma[i])
            })
        })
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let tau = 2.0 * std::f64::consts::PI;
        self.modes()
            .map(|(k, l, a, b)| {
                let ph = tau * (k * x + l * y);
                a * ph.cos() + b * ph.sin()
            })
            .sum()
    }

    /// The heat-equation solution from this field at time `t` with diffusivity `kappa`.
    pub fn eval_heat(&self, x: f64, y: f64, t: f64, kappa: f64) -> f64 {
        let tau = 2.0 * std::f64::consts::PI;
        self.modes()
            .map(|(k, l, a, b)| {
                let ph = tau * (k * x + l * y);
                let decay = (-kappa * tau * tau * (k * k + l * l) * t).exp();
                decay * (a * ph.cos() + b * ph.sin())
            })
            .sum()
    }

    /// Values on the `res x res` grid, row `iy`, column `ix` at `(ix / res, iy / res)`.
    pub fn on_grid(&self, res: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(res * res);
        for iy in 0..res {
            for ix in 0..res {
                out.push(self.eval(ix as f64 / res as f64, iy as f64 / res as f64));
            }
        }
        out
    }
}

/// Min-max maps `raw` onto `[1, 2]`; `None` for a constant field.
pub fn normalize_height(raw: &[f64]) -> Option<Vec<f64>> {
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    if !(span > 1e-12 * (1.0 + hi.abs().max(lo.abs()))) {
        return None;
    }
    Some(raw.iter().map(|v| 1.0 + (v - lo) / span).collect())
}

/// Initial height on the solver grid with range exactly `[1, 2]`; degenerate draws are resampled.
pub fn sample_initial_height(cfg: &SwConfig, rng: &mut Rng) -> Result<(FourierField, Vec<f64>)> {
    cfg.validate()?;
    for _ in 0..100 {
        let field = FourierField::random(cfg.n_modes, rng);
        if let Some(h) = normalize_height(&field.on_grid(cfg.resolution)) {
            return Ok((field, h));
        }
    }
    Err(Error::Numeric("100 consecutive constant initial fields".into()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwState {
    pub h: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Solver states at the requested output times.
#[derive(Clone, Debug, PartialEq)]
pub struct SwSolution {
    pub resolution: usize,
    pub times: Vec<f64>,
    pub states: Vec<SwState>,
    pub steps: usize,
}

const BLOWUP_HEIGHT: f64 = 10.0;

struct SwGrid {
    res: usize,
    inv_2dx: f64,
    g: f64,
}

impl SwGrid {
    fn idx(&self, ix: usize, iy: usize) -> usize {
        iy * self.res + ix
    }

    fn rhs(&self, s: &SwState, out: &mut SwState) {
        let n = self.res;
        let c = self.inv_2dx;
        for iy in 0..n {
            let (up, dn) = ((iy + 1) % n, (iy + n - 1) % n);
            for ix in 0..n {
                let (rt, lf) = ((ix + 1) % n, (ix + n - 1) % n);
                let i = self.idx(ix, iy);
                let (e, w, no, so) = (self.idx(rt, iy), self.idx(lf, iy), self.idx(ix, up), self.idx(ix, dn));
                let (h, u, v) = (&s.h, &s.u, &s.v);
                let dhu = (h[e] * u[e] - h[w] * u[w]) * c;
                let dhv = (h[no] * v[no] - h[so] * v[so]) * c;
                out.h[i] = -(dhu + dhv);
                out.u[i] = -(u[i] * (u[e] - u[w]) * c + v[i] * (u[no] - u[so]) * c + self.g * (h[e] - h[w]) * c);
                out.v[i] = -(u[i] * (v[e] - v[w]) * c + v[i] * (v[no] - v[so]) * c + self.g * (h[no] - h[so]) * c);
            }
        }
    }
}

fn axpy(base: &SwState, k: &SwState, a: f64, out: &mut SwState) {
    for (dst, (b, kk)) in [
        (&mut out.h, (&base.h, &k.h)),
        (&mut out.u, (&base.u, &k.u)),
        (&mut out.v, (&base.v, &k.v)),
    ] {
        dst.iter_mut()
            .zip(b.iter().zip(kk))
            .for_each(|(d, (x, y))| *d = x + a * y);
    }
}

/// Integrates the shallow-water equations from rest with central differences and RK4.
///
/// The step is `cfl * dx / max(|u| + sqrt(g h), |v| + sqrt(g h))`, shortened to land on every output time.
pub fn solve_shallow_water(h0: &[f64], cfg: &SwConfig, times: &[f64]) -> Result<SwSolution> {
    cfg.validate()?;
    let res = cfg.resolution;
    contract!(
        h0.len() == res * res,
        "initial height has {} values for a {res}x{res} grid",
        h0.len()
    );
    contract!(
        times.iter().all(|&t| t >= 0.0) && times.windows(2).all(|w| w[0] <= w[1]),
        "output times must be non-negative and sorted"
    );
    let dx = 1.0 / res as f64;
    let grid = SwGrid {
        res,
        inv_2dx: 0.5 / dx,
        g: cfg.gravity,
    };
    let zeros = vec![0.0; res * res];
    let mut s = SwState {
        h: h0.to_vec(),
        u: zeros.clone(),
        v: zeros.clone(),
    };
    let blank = || SwState {
        h: zeros.clone(),
        u: zeros.clone(),
        v: zeros.clone(),
    };
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (blank(), blank(), blank(), blank(), blank());
    let mut t = 0.0;
    let mut steps = 0;
    let mut states = Vec::with_capacity(times.len());
    for &target in times {
        while t < target {
            let speed = (0..res * res)
                .map(|i| {
                    let c = (cfg.gravity * s.h[i].max(0.0)).sqrt();
                    (s.u[i].abs() + c).max(s.v[i].abs() + c)
                })
                .fold(0.0, f64::max);
            let dt_cfl = cfg.cfl * dx / speed.max(1e-12);
            let dt = dt_cfl.min(target - t);
            grid.rhs(&s, &mut k1);
            axpy(&s, &k1, 0.5 * dt, &mut tmp);
            grid.rhs(&tmp, &mut k2);
            axpy(&s, &k2, 0.5 * dt, &mut tmp);
            grid.rhs(&tmp, &mut k3);
            axpy(&s, &k3, dt, &mut tmp);
            grid.rhs(&tmp, &mut k4);
            for (dst, ks) in [
                (&mut s.h, [&k1.h, &k2.h, &k3.h, &k4.h]),
                (&mut s.u, [&k1.u, &k2.u, &k3.u, &k4.u]),
                (&mut s.v, [&k1.v, &k2.v, &k3.v, &k4.v]),
            ] {
                for i in 0..dst.len() {
                    dst[i] += dt / 6.0 * (ks[0][i] + 2.0 * ks[1][i] + 2.0 * ks[2][i] + ks[3][i]);
                }
            }
            t = if dt == target - t { target } else { t + dt };
            steps += 1;
            let max_h = s.h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if !(max_h <= BLOWUP_HEIGHT) || s.u.iter().chain(&s.v).any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "shallow-water solution blew up at t={t} (max |h| = {max_h}); try a smaller cfl than {}",
                    cfg.cfl
                )));
            }
        }
        states.push(s.clone());
    }
    Ok(SwSolution {
        resolution: res,
        times: times.to_vec(),
        states,
        steps,
    })
}

/// `sum h dx dy` over the periodic solver grid.
pub fn total_mass(h: &[f64], res: usize) -> f64 {
    h.iter().sum::<f64>() / (res * res) as f64
}

/// Bilinear interpolation of a periodic `res x res` field at `p`.
pub fn sample_bilinear(field: &[f64], res: usize, p: Point) -> f64 {
    let fx = p[0].rem_euclid(1.0) * res as f64;
    let fy = p[1].rem_euclid(1.0) * res as f64;
    let (x0, y0) = (fx.floor(), fy.floor());
    let (ax, ay) = (fx - x0, fy - y0);
    let (x0, y0) = (x0 as usize % res, y0 as usize % res);
    let (x1, y1) = ((x0 + 1) % res, (y0 + 1) % res);
    let at = |x: usize, y: usize| field[y * res + x];
    (1.0 - ay) * ((1.0 - ax) * at(x0, y0) + ax * at(x1, y0)) + ay * ((1.0 - ax) * at(x0, y1) + ax * at(x1, y1))
}

/// Shared random grids and per-trajectory seeds of one generator configuration.
#[derive(Clone, Debug)]
struct Design {
    coords: Vec<Point>,
    /// Unnormalised times; the first is 0.
    times: Vec<f64>,
    seeds: Vec<u64>,
    noise_seed: u64,
}

fn design(cfg: &SwConfig) -> Design {
    let mut rng = rng_from_seed(cfg.seed);
    let coords = (0..cfg.n_points).map(|_| [rng.random(), rng.random()]).collect();
    let times = loop {
        let mut t: Vec<f64> = (1..cfg.n_times).map(|_| rng.random::<f64>() * cfg.t_final).collect();
        t.push(0.0);
        t.sort_by(f64::total_cmp);
        if t.windows(2).all(|w| w[0] < w[1]) {
            break t;
        }
    };
    let seeds = (0..cfg.total()).map(|_| rng.random()).collect();
    let noise_seed = rng.random();
    Design {
        coords,
        times,
        seeds,
        noise_seed,
    }
}

/// Unnormalised observations (`M x N`) of one trajectory at `coords`.
fn simulate(cfg: &SwConfig, seed: u64, times: &[f64], coords: &[Point]) -> Result<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    match cfg.generator {
        Generator::ShallowWater => {
            let (_, h0) = sample_initial_height(cfg, &mut rng)?;
            let sol = solve_shallow_water(&h0, cfg, times)?;
            Ok(sol
                .states
                .iter()
                .flat_map(|s| coords.iter().map(|&p| sample_bilinear(&s.h, cfg.resolution, p)))
                .collect())
        }
        Generator::Diffusion => {
            let field = loop {
                let f = FourierField::random(cfg.n_modes, &mut rng);
                if normalize_height(&f.on_grid(cfg.resolution)).is_some() {
                    break f;
                }
            };
            Ok(times
                .iter()
                .flat_map(|&t| coords.iter().map(move |&p| (p, t)))
                .map(|(p, t)| field.eval_heat(p[0], p[1], t, cfg.kappa))
                .collect())
        }
    }
}

fn simulate_all(cfg: &SwConfig, d: &Design, which: &[usize], coords: &[Point]) -> Result<Vec<Vec<f64>>> {
    which
        .par_iter()
        .map(|&i| simulate(cfg, d.seeds[i], &d.times, coords))
        .collect()
}

/// Train, validation and test splits; `test_clean` holds noise-free test values when noise is configured.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub test_clean: Option<Dataset>,
    pub warnings: Vec<String>,
}

impl Splits {
    /// Writes `train.lnpde`, `val.lnpde`, `test.lnpde` (and `test_clean.lnpde`) into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut files = vec![("train", &self.train), ("val", &self.val), ("test", &self.test)];
        if let Some(c) = &self.test_clean {
            files.push(("test_clean", c));
        }
        files
            .into_iter()
            .map(|(name, ds)| {
                let path = dir.join(format!("{name}.lnpde"));
                ds.save(&path)?;
                Ok(path)
            })
            .collect()
    }
}

struct Normalizer {
    lo: f64,
    hi: f64,
}

impl Normalizer {
    fn fit(values: &[Vec<f64>]) -> Result<Self> {
        let (lo, hi) = values
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !(hi > lo) {
            return Err(Error::Numeric("observations are constant; cannot normalise".into()));
        }
        Ok(Self { lo, hi })
    }

    fn apply(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }
}

fn build_split(
    cfg: &SwConfig,
    d: &Design,
    coords: &[Point],
    norm: &Normalizer,
    split: &str,
    values: &[Vec<f64>],
    noise: Option<&mut Rng>,
) -> Dataset {
    let mut obs: Vec<f64> = values.iter().flatten().map(|&v| norm.apply(v)).collect();
    let noisy = noise.is_some();
    if let Some(rng) = noise {
        for v in &mut obs {
            *v += cfg.noise_std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut meta: BTreeMap<String, String> = cfg.pairs().into_iter().map(|(k, v)| (format!("gen.{k}"), v)).collect();
    meta.insert("split".into(), split.into());
    meta.insert("norm.obs_min".into(), float(norm.lo));
    meta.insert("norm.obs_max".into(), float(norm.hi));
    meta.insert("norm.time_scale".into(), float(cfg.t_final));
    meta.insert("norm.coord_scale".into(), float(1.0));
    meta.insert("noisy".into(), noisy.to_string());
    Dataset {
        coords: coords.to_vec(),
        times: d.times.iter().map(|t| t / cfg.t_final).collect(),
        obs,
        n_traj: values.len(),
        obs_dim: 1,
        domain: Domain::unit_periodic(),
        meta,
    }
}

fn split_ranges(cfg: &SwConfig) -> [(String, Vec<usize>); 3] {
    let a = cfg.n_train;
    let b = a + cfg.n_val;
    [
        ("train".into(), (0..a).collect()),
        ("val".into(), (a..b).collect()),
        ("test".into(), (b..cfg.total()).collect()),
    ]
}

/// Generates all splits; observations are the height field only, scaled to `[0, 1]`
/// jointly over all splits, with noise added after scaling.
pub fn make_dataset(cfg: &SwConfig) -> Result<Splits> {
    cfg.validate()?;
    let d = design(cfg);
    let mut warnings = Vec::new();
    if cfg.generator == Generator::ShallowWater && cfg.n_points > cfg.resolution * cfg.resolution {
        warnings.push(format!(
            "{} sample locations exceed the {}x{} solver cells; the data is oversampled",
            cfg.n_points, cfg.resolution, cfg.resolution
        ));
    }
    let all: Vec<usize> = (0..cfg.total()).collect();
    let values = simulate_all(cfg, &d, &all, &d.coords)?;
    let norm = Normalizer::fit(&values)?;
    let mut noise_rng = rng_from_seed(d.noise_seed);
    let ranges = split_ranges(cfg);
    let mut sets = Vec::with_capacity(3);
    for (name, idx) in &ranges {
        let vals: Vec<Vec<f64>> = idx.iter().map(|&i| values[i].clone()).collect();
        let rng = (cfg.noise_std > 0.0).then_some(&mut noise_rng);
        sets.push(build_split(cfg, &d, &d.coords, &norm, name, &vals, rng));
    }
    let test_clean = (cfg.noise_std > 0.0).then(|| {
        let idx = &ranges[2].1;
        let vals: Vec<Vec<f64>> = idx.iter().map(|&i| values[i].clone()).collect();
        build_split(cfg, &d, &d.coords, &norm, "test_clean", &vals, None)
    });
    let mut it = sets.into_iter();
    Ok(Splits {
        train: it.next().expect("three splits"),
        val: it.next().expect("three splits"),
        test: it.next().expect("three splits"),
        test_clean,
        warnings,
    })
}

/// The shared spatial locations `make_dataset(cfg)` uses.
pub fn design_coords(cfg: &SwConfig) -> Vec<Point> {
    design(cfg).coords
}

/// The generator configuration recorded in a dataset's `gen.*` entries.
pub fn generator_config(ds: &Dataset) -> Result<SwConfig> {
    let pairs: Vec<(String, String)> = ds
        .meta
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("gen.").map(|k| (k.to_string(), v.clone())))
        .collect();
    contract!(!pairs.is_empty(), "dataset carries no generator configuration");
    let mut cfg = SwConfig::default();
    cfg.apply(&pairs)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Noise-free test trajectories of `cfg` re-sampled at `coords` from the generating
/// solver, with the normalisation of the original dataset.
pub fn resample_test(cfg: &SwConfig, coords: &[Point]) -> Result<Dataset> {
    cfg.validate()?;
    let d = design(cfg);
    let all: Vec<usize> = (0..cfg.total()).collect();
    let norm = Normalizer::fit(&simulate_all(cfg, &d, &all, &d.coords)?)?;
    let test_idx = split_ranges(cfg)[2].1.clone();
    let values = simulate_all(cfg, &d, &test_idx, coords)?;
    let mut ds = build_split(cfg, &d, coords, &norm, "test_resampled", &values, None);
    ds.grid()?;
    ds.meta.insert("resampled".into(), "true".into());
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(res: usize) -> SwConfig {
        SwConfig {
            resolution: res,
            ..SwConfig::default()
        }
    }

    #[test]
    fn initial_height_spans_one_to_two() {
        for seed in 0..5 {
            let (_, h) = sample_initial_height(&small(32), &mut rng_from_seed(seed)).unwrap();
            let lo = h.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!((lo - 1.0).abs() <= 1e-12 && (hi - 2.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_field_is_degenerate() {
        let n = 3;
        let mut lambda = vec![0.0; 49];
        lambda[(n * 7) + n] = 1.7;
        let f = FourierField {
            n_modes: n,
            lambda,
            gamma: vec![0.0; 49],
        };
        assert!(normalize_height(&f.on_grid(16)).is_none());
    }

    #[test]
    fn fourier_field_is_periodic() {
        let f = FourierField::random(3, &mut rng_from_seed(1));
        for y in [0.0, 0.13, 0.5, 0.91] {
            assert!((f.eval(0.0, y) - f.eval(1.0, y)).abs() <= 1e-12);
            assert!((f.eval(y, 0.0) - f.eval(y, 1.0)).abs() <= 1e-12);
        }
    }

    #[test]
    fn still_water_stays_still() {
        let cfg = small(16);
        let h0 = vec![1.3; 256];
        let sol = solve_shallow_water(&h0, &cfg, &[0.05, 0.1]).unwrap();
        for s in &sol.states {
            assert!(s.h.iter().all(|&v| v == 1.3));
            assert!(s.u.iter().chain(&s.v).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn bilinear_reproduces_nodes_and_wraps() {
        let res = 4;
        let field: Vec<f64> = (0..16).map(|i| i as f64).collect();
        assert_eq!(sample_bilinear(&field, res, [0.25, 0.5]), field[2 * 4 + 1]);
        assert_eq!(sample_bilinear(&field, res, [1.25, -0.5]), field[2 * 4 + 1]);
        let mid = sample_bilinear(&field, res, [0.875, 0.0]);
        assert!((mid - 0.5 * (field[3] + field[0])).abs() < 1e-15);
    }

    #[test]
    fn blow_up_is_reported() {
        let cfg = SwConfig { cfl: 4.0, ..small(16) };
        let (_, h0) = sample_initial_height(&cfg, &mut rng_from_seed(3)).unwrap();
        let err = solve_shallow_water(&h0, &cfg, &[1.0]);
        assert!(matches!(err, Err(Error::Numeric(_))), "{err:?}");
    }

    #[test]
    fn config_round_trips() {
        let mut cfg = SwConfig::desk();
        cfg.noise_std = 0.05;
        let mut back = SwConfig::default();
        back.apply(&cfg.pairs()).unwrap();
        assert_eq!(back, cfg);
    }
}
