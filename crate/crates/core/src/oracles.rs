//! Slow, independent reference computations used to check the main code paths.
//!
//! Nothing in here calls into the tape, the solvers, the KL code or the
//! forecaster; each routine is written from the defining formula.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::numcore::Rng;

/// Central finite-difference gradient.
///
/// Coordinate `i` uses the step `h * max(1, |theta_i|)`.
pub fn fd_gradient<F>(mut f: F, theta: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let step = h * theta[i].abs().max(1.0);
            x[i] = theta[i] + step;
            let fp = f(&x);
            x[i] = theta[i] - step;
            let fm = f(&x);
            x[i] = theta[i];
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

/// Max over coordinates of `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Monte-Carlo estimate of the KL divergence and its standard error.
#[derive(Clone, Copy, Debug)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
}

fn log_normal_density(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// `E_q[log q(x) - log p(x)]` for diagonal Gaussians `q = N(q_mean, q_std^2)`, `p` likewise.
pub fn mc_kl(q_mean: &[f64], q_std: &[f64], p_mean: &[f64], p_std: &[f64], n: usize, rng: &mut Rng) -> McEstimate {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let mut s = 0.0;
        for i in 0..q_mean.len() {
            let eps: f64 = rng.sample(StandardNormal);
            let x = q_mean[i] + q_std[i] * eps;
            s += log_normal_density(x, q_mean[i], q_std[i]) - log_normal_density(x, p_mean[i], p_std[i]);
        }
        sum += s;
        sum_sq += s * s;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sum_sq / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
    McEstimate {
        mean,
        std_err: (var / nf).sqrt(),
    }
}

/// `exp(a * t) * z0` by truncated Taylor series with scaling and squaring.
pub fn expm_apply(a: &[f64], n: usize, t: f64, z0: &[f64]) -> Vec<f64> {
    let norm: f64 = a.iter().map(|v| v.abs()).sum::<f64>() * t.abs();
    let mut squarings = 0;
    while norm / 2f64.powi(squarings) > 0.5 {
        squarings += 1;
    }
    let s = t / 2f64.powi(squarings);
    let mut eye = vec![0.0; n * n];
    for i in 0..n {
        eye[i * n + i] = 1.0;
    }
    let mut result = eye.clone();
    let mut term = eye;
    for k in 1..30 {
        let mut next = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                for p in 0..n {
                    next[i * n + j] += term[i * n + p] * a[p * n + j] * s / k as f64;
                }
            }
        }
        term = next;
        for (r, v) in result.iter_mut().zip(&term) {
            *r += v;
        }
    }
    for _ in 0..squarings {
        let mut sq = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                for p in 0..n {
                    sq[i * n + j] += result[i * n + p] * result[p * n + j];
                }
            }
        }
        result = sq;
    }
    (0..n)
        .map(|i| (0..n).map(|j| result[i * n + j] * z0[j]).sum())
        .collect()
}

/// Repeats the last context frame for each of `n_targets` future frames.
pub fn persistence_forecast(context: &[Vec<f64>], n_targets: usize) -> Vec<Vec<f64>> {
    let last = context.last().expect("persistence_forecast needs a non-empty context");
    vec![last.clone(); n_targets]
}

/// Mean absolute error over equally shaped frame lists.
pub fn frames_mae(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        for (a, b) in p.iter().zip(t) {
            s += (a - b).abs();
            n += 1;
        }
    }
    s / n as f64
}
