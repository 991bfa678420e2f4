//! Amortised encoder: stencil patches of the observations, embedded per time
//! point, aggregated over nearby time points by masked attention with relative
//! time encodings, and read out as diagonal Gaussian parameters per node.

use std::sync::Arc;

use crate::error::{contract, Result};
use crate::numcore::{
    xavier_init, Activation, AttentionLayout, BoundParams, Graph, ParamStore, Rng, SparseRows, Tensor, Var,
};
use crate::spatial::{InterpMethod, Interpolant, Interpolator, SpatialGrid};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub embed: usize,
    pub layers: usize,
    pub heads: usize,
    pub delta_t: f64,
    pub n_freq: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed: 128,
            layers: 6,
            heads: 4,
            delta_t: 0.1,
            n_freq: 8,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        contract!(
            self.embed > 0 && self.layers > 0 && self.heads > 0,
            "encoder widths must be positive"
        );
        contract!(
            self.embed % self.heads == 0,
            "embed width {} not divisible by {} heads",
            self.embed,
            self.heads
        );
        contract!(self.delta_t > 0.0, "delta_t must be positive");
        contract!(self.n_freq >= 1, "need at least one frequency");
        Ok(())
    }
}

/// Time indices within `delta_t` of the anchor, ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalWindow {
    pub anchor: usize,
    pub members: Vec<usize>,
}

impl TemporalWindow {
    pub fn new(times: &[f64], anchor: usize, delta_t: f64) -> Result<Self> {
        contract!(anchor < times.len(), "anchor index {anchor} out of range");
        let ta = times[anchor];
        let members = (0..times.len()).filter(|&k| (times[k] - ta).abs() <= delta_t).collect();
        Ok(Self { anchor, members })
    }

    /// Position of the anchor inside `members`.
    pub fn anchor_pos(&self) -> usize {
        self.members
            .iter()
            .position(|&k| k == self.anchor)
            .expect("anchor is always a member")
    }
}

/// Diagonal Gaussian with mean `mean` and standard deviation `std`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub mean: Tensor,
    pub std: Tensor,
}

/// `[sin(w_r dt), cos(w_r dt)]` at `n_freq` geometric frequencies from 1 to `2 pi / delta_t`.
pub fn relative_time_features(dt: f64, delta_t: f64, n_freq: usize) -> Vec<f64> {
    let top = 2.0 * std::f64::consts::PI / delta_t;
    let mut out = Vec::with_capacity(2 * n_freq);
    for r in 0..n_freq {
        let w = if n_freq == 1 {
            1.0
        } else {
            top.powf(r as f64 / (n_freq - 1) as f64)
        };
        out.push((w * dt).sin());
        out.push((w * dt).cos());
    }
    out
}

/// One interpolant per time point of an `M x N x D` observation block.
pub fn build_obs_interpolants(
    grid: &SpatialGrid,
    method: InterpMethod,
    obs: &[f64],
    m: usize,
    d: usize,
) -> Result<Vec<Interpolant>> {
    let n = grid.len();
    contract!(obs.len() == m * n * d, "observation block has wrong size");
    let geometry = Arc::new(Interpolator::new(grid.clone(), method)?);
    (0..m)
        .map(|i| {
            let vals = Tensor::new(vec![n, d], obs[i * n * d..(i + 1) * n * d].to_vec())?;
            Interpolant::new(Arc::clone(&geometry), vals)
        })
        .collect()
}

/// Encoder inputs for one trajectory: stacked stencil patches per time point.
#[derive(Clone, Debug)]
pub struct EncoderInput {
    /// `(M * N) x (K * D)`, row `i * N + j` is the patch around node `j` at time `i`.
    pub patches: Tensor,
    pub times: Vec<f64>,
    pub n: usize,
}

impl EncoderInput {
    /// `op` is a node neighbourhood operator (`N * K` rows); `obs` is `M x N x D`.
    pub fn new(op: &SparseRows, obs: &[f64], times: &[f64], d: usize) -> Result<Self> {
        let n = op.n_cols();
        let m = times.len();
        contract!(obs.len() == m * n * d, "observation block has wrong size");
        contract!(
            obs.iter().all(|v| v.is_finite()),
            "observations contain NaN or infinity"
        );
        let k = op.n_rows() / n;
        let mut data = Vec::with_capacity(m * n * k * d);
        for i in 0..m {
            data.extend(op.apply(&obs[i * n * d..(i + 1) * n * d], d));
        }
        Ok(Self {
            patches: Tensor::new(vec![m * n, k * d], data)?,
            times: times.to_vec(),
            n,
        })
    }
}

struct LayerVars {
    ln1: (Var, Var),
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    bo: Var,
    pe_w: Var,
    pe_b: Var,
    ln2: (Var, Var),
    ff1: (Var, Var),
    ff2: (Var, Var),
}

/// Encoder weights bound to a graph.
pub struct EncoderVars {
    spatial: (Var, Var),
    layers: Vec<LayerVars>,
    ln_f: (Var, Var),
    mean: (Var, Var),
    log_std: (Var, Var),
}

#[derive(Clone, Copy)]
enum Init {
    Xavier,
    Zeros,
    Ones,
}

fn schema(cfg: &EncoderConfig, patch_width: usize, latent_dim: usize) -> Vec<(String, Vec<usize>, Init)> {
    let e = cfg.embed;
    let f = 2 * cfg.n_freq;
    let mut s = vec![
        ("enc.spatial.w".to_string(), vec![patch_width, e], Init::Xavier),
        ("enc.spatial.b".to_string(), vec![e], Init::Zeros),
    ];
    for l in 0..cfg.layers {
        let p = |n: &str| format!("enc.l{l}.{n}");
        s.extend([
            (p("ln1.g"), vec![e], Init::Ones),
            (p("ln1.b"), vec![e], Init::Zeros),
            (p("wq"), vec![e, e], Init::Xavier),
            (p("wk"), vec![e, e], Init::Xavier),
            (p("wv"), vec![e, e], Init::Xavier),
            (p("wo"), vec![e, e], Init::Xavier),
            (p("bo"), vec![e], Init::Zeros),
            (p("pe.w"), vec![f, e], Init::Xavier),
            (p("pe.b"), vec![e], Init::Zeros),
            (p("ln2.g"), vec![e], Init::Ones),
            (p("ln2.b"), vec![e], Init::Zeros),
            (p("ff1.w"), vec![e, 2 * e], Init::Xavier),
            (p("ff1.b"), vec![2 * e], Init::Zeros),
            (p("ff2.w"), vec![2 * e, e], Init::Xavier),
            (p("ff2.b"), vec![e], Init::Zeros),
        ]);
    }
    s.extend([
        ("enc.ln_f.g".to_string(), vec![e], Init::Ones),
        ("enc.ln_f.b".to_string(), vec![e], Init::Zeros),
        ("enc.read.mean.w".to_string(), vec![e, latent_dim], Init::Xavier),
        ("enc.read.mean.b".to_string(), vec![latent_dim], Init::Zeros),
        ("enc.read.log_std.w".to_string(), vec![e, latent_dim], Init::Xavier),
        ("enc.read.log_std.b".to_string(), vec![latent_dim], Init::Zeros),
    ]);
    s
}

/// Adds freshly initialised encoder parameters (prefix `enc.`) to `store`.
pub fn init_encoder(
    store: &mut ParamStore,
    cfg: &EncoderConfig,
    patch_width: usize,
    latent_dim: usize,
    rng: &mut Rng,
) -> Result<()> {
    cfg.validate()?;
    for (name, shape, init) in schema(cfg, patch_width, latent_dim) {
        let t = match init {
            Init::Xavier => xavier_init(&shape, rng)?,
            Init::Zeros => Tensor::zeros(&shape),
            Init::Ones => Tensor::full(&shape, 1.0),
        };
        store.insert(&name, t)?;
    }
    Ok(())
}

impl EncoderVars {
    pub fn bind(params: &BoundParams, cfg: &EncoderConfig) -> Result<Self> {
        let v = |n: &str| params.var(n);
        let pair = |a: &str, b: &str| -> Result<(Var, Var)> { Ok((v(a)?, v(b)?)) };
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = |n: &str| format!("enc.l{l}.{n}");
            layers.push(LayerVars {
                ln1: pair(&p("ln1.g"), &p("ln1.b"))?,
                wq: v(&p("wq"))?,
                wk: v(&p("wk"))?,
                wv: v(&p("wv"))?,
                wo: v(&p("wo"))?,
                bo: v(&p("bo"))?,
                pe_w: v(&p("pe.w"))?,
                pe_b: v(&p("pe.b"))?,
                ln2: pair(&p("ln2.g"), &p("ln2.b"))?,
                ff1: pair(&p("ff1.w"), &p("ff1.b"))?,
                ff2: pair(&p("ff2.w"), &p("ff2.b"))?,
            });
        }
        Ok(Self {
            spatial: pair("enc.spatial.w", "enc.spatial.b")?,
            layers,
            ln_f: pair("enc.ln_f.g", "enc.ln_f.b")?,
            mean: pair("enc.read.mean.w", "enc.read.mean.b")?,
            log_std: pair("enc.read.log_std.w", "enc.read.log_std.b")?,
        })
    }
}

/// Linear map of flattened stencil patches (rows) to the embedding width.
pub fn spatial_aggregate(g: &mut Graph, vars: &EncoderVars, patches: Var) -> Result<Var> {
    g.dense(patches, vars.spatial.0, Some(vars.spatial.1), Activation::Identity)
}

/// Attention over the tokens of one temporal window.
///
/// `tokens` is `(N * W) x E` (node-major); the result is `N x E`, the anchor's
/// representation at every node.
pub fn temporal_aggregate(
    g: &mut Graph,
    vars: &EncoderVars,
    cfg: &EncoderConfig,
    tokens: Var,
    n: usize,
    window_times: &[f64],
    anchor_pos: usize,
) -> Result<Var> {
    let w = window_times.len();
    contract!(w > 0, "empty temporal window");
    contract!(anchor_pos < w, "anchor outside its window");
    contract!(
        g.shape(tokens)[0] == n * w,
        "expected {} tokens, got {}",
        n * w,
        g.shape(tokens)[0]
    );
    let mut x = tokens;
    let mut queries: Vec<usize> = (0..w).collect();
    for (l, lv) in vars.layers.iter().enumerate() {
        if l + 1 == vars.layers.len() {
            queries = vec![anchor_pos];
        }
        let nq = queries.len();
        let mut mask = Vec::with_capacity(nq * w);
        let mut feats = Vec::with_capacity(nq * w * 2 * cfg.n_freq);
        for &q in &queries {
            for m in 0..w {
                let dt = window_times[m] - window_times[q];
                mask.push(dt.abs() <= cfg.delta_t);
                feats.extend(relative_time_features(dt, cfg.delta_t, cfg.n_freq));
            }
        }
        let layout = Arc::new(AttentionLayout {
            groups: n,
            window: w,
            heads: cfg.heads,
            queries: queries.clone(),
            mask,
        });
        let h = g.layer_norm(x, lv.ln1.0, lv.ln1.1)?;
        let hq = if nq == w {
            h
        } else {
            let idx: Vec<usize> = (0..n).flat_map(|j| queries.iter().map(move |&q| j * w + q)).collect();
            g.rows(h, &idx)?
        };
        let q = g.matmul(hq, lv.wq)?;
        let k = g.matmul(h, lv.wk)?;
        let v = g.matmul(h, lv.wv)?;
        let fv = g.constant_vec(vec![nq * w, 2 * cfg.n_freq], feats);
        let pos = g.dense(fv, lv.pe_w, Some(lv.pe_b), Activation::Identity)?;
        let att = g.attention(q, k, v, pos, &layout)?;
        let o = g.dense(att, lv.wo, Some(lv.bo), Activation::Identity)?;
        let resid = if nq == w {
            x
        } else {
            let idx: Vec<usize> = (0..n).flat_map(|j| queries.iter().map(move |&q| j * w + q)).collect();
            g.rows(x, &idx)?
        };
        let x1 = g.add(resid, o)?;
        let h2 = g.layer_norm(x1, lv.ln2.0, lv.ln2.1)?;
        let f1 = g.dense(h2, lv.ff1.0, Some(lv.ff1.1), Activation::Relu)?;
        let f2 = g.dense(f1, lv.ff2.0, Some(lv.ff2.1), Activation::Identity)?;
        x = g.add(x1, f2)?;
    }
    g.layer_norm(x, vars.ln_f.0, vars.ln_f.1)
}

/// `gamma = affine(alpha)`, `tau = exp(affine(alpha))`.
pub fn readout(g: &mut Graph, vars: &EncoderVars, alpha: Var) -> Result<(Var, Var)> {
    let mean = g.dense(alpha, vars.mean.0, Some(vars.mean.1), Activation::Identity)?;
    let log_std = g.dense(alpha, vars.log_std.0, Some(vars.log_std.1), Activation::Identity)?;
    let std = g.exp(log_std);
    Ok((mean, std))
}

/// Variational parameters `(gamma, tau)` (each `N x d`) of the latent state at each anchor time index.
pub fn encode(
    g: &mut Graph,
    vars: &EncoderVars,
    cfg: &EncoderConfig,
    input: &EncoderInput,
    anchors: &[usize],
) -> Result<Vec<(Var, Var)>> {
    let n = input.n;
    let windows: Vec<TemporalWindow> = anchors
        .iter()
        .map(|&a| TemporalWindow::new(&input.times, a, cfg.delta_t))
        .collect::<Result<_>>()?;
    let mut used: Vec<usize> = windows.iter().flat_map(|w| w.members.iter().copied()).collect();
    used.sort_unstable();
    used.dedup();
    let k = input.patches.cols();
    let mut rows = Vec::with_capacity(used.len() * n * k);
    for &i in &used {
        rows.extend_from_slice(&input.patches.data()[i * n * k..(i + 1) * n * k]);
    }
    let p = g.constant_vec(vec![used.len() * n, k], rows);
    let alpha_s = spatial_aggregate(g, vars, p)?;
    let mut out = Vec::with_capacity(anchors.len());
    for win in &windows {
        let slot = |i: usize| used.binary_search(&i).expect("member embedded");
        let idx: Vec<usize> = (0..n)
            .flat_map(|j| win.members.iter().map(move |&i| (i, j)))
            .map(|(i, j)| slot(i) * n + j)
            .collect();
        let tokens = g.rows(alpha_s, &idx)?;
        let times: Vec<f64> = win.members.iter().map(|&i| input.times[i]).collect();
        let alpha = temporal_aggregate(g, vars, cfg, tokens, n, &times, win.anchor_pos())?;
        out.push(readout(g, vars, alpha)?);
    }
    Ok(out)
}
