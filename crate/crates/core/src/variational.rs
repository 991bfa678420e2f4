//! Multiple-shooting partition, Gaussian KL terms and the pieces of the ELBO.

use crate::encoder::GaussianParams;
use crate::error::{contract, Result};
use crate::latent_pde::{odesolve, Rhs, SolverConfig};
use crate::numcore::{Graph, Var};

/// Consecutive blocks of time indices and the anchor time index preceding each block.
#[derive(Clone, Debug, PartialEq)]
pub struct ShootingPartition {
    pub blocks: Vec<Vec<usize>>,
    /// `anchors[0] = 0`; `anchors[b]` is the last index of block `b - 1`.
    pub anchors: Vec<usize>,
}

impl ShootingPartition {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn anchor_times(&self, times: &[f64]) -> Vec<f64> {
        self.anchors.iter().map(|&a| times[a]).collect()
    }
}

/// Splits `times` (strictly increasing) into blocks of `block_len`; the last block may be shorter.
pub fn make_partition(times: &[f64], block_len: usize) -> Result<ShootingPartition> {
    let m = times.len();
    contract!(block_len >= 1, "block length must be at least 1");
    contract!(block_len <= m, "block length {block_len} exceeds {m} time points");
    contract!(
        times.windows(2).all(|w| w[0] < w[1]),
        "time points must be strictly increasing"
    );
    let blocks: Vec<Vec<usize>> = (0..m)
        .collect::<Vec<_>>()
        .chunks(block_len)
        .map(|c| c.to_vec())
        .collect();
    let mut anchors = vec![0];
    for b in 1..blocks.len() {
        anchors.push(*blocks[b - 1].last().expect("blocks are non-empty"));
    }
    Ok(ShootingPartition { blocks, anchors })
}

/// Closed-form `KL[q || p]` between diagonal Gaussians.
pub fn kl_diag_gaussian(q: &GaussianParams, p: &GaussianParams) -> Result<f64> {
    contract!(
        q.mean.len() == p.mean.len() && q.std.len() == q.mean.len() && p.std.len() == p.mean.len(),
        "KL operands have different dimensions"
    );
    contract!(
        q.std.data().iter().chain(p.std.data()).all(|&s| s > 0.0),
        "KL needs strictly positive standard deviations"
    );
    let mut kl = 0.0;
    for i in 0..q.mean.len() {
        let (qm, qs) = (q.mean.data()[i], q.std.data()[i]);
        let (pm, ps) = (p.mean.data()[i], p.std.data()[i]);
        kl += (ps / qs).ln() + (qs * qs + (qm - pm) * (qm - pm)) / (2.0 * ps * ps) - 0.5;
    }
    Ok(kl)
}

/// `KL[N(q_mean, q_std^2) || N(p_mean, p_std^2 I)]` summed over all entries, on the graph.
///
/// `q_log_std` is `log q_std`; passing it avoids a `log(exp(.))` round trip.
/// `p_mean = None` means a zero-mean prior.
pub fn kl_to_isotropic(g: &mut Graph, q_mean: Var, q_log_std: Var, p_mean: Option<Var>, p_std: f64) -> Result<Var> {
    contract!(p_std > 0.0, "prior std must be positive");
    let n = g.value(q_mean).len() as f64;
    let var = {
        let two = g.scale(q_log_std, 2.0);
        g.exp(two)
    };
    let diff = match p_mean {
        Some(pm) => g.sub(q_mean, pm)?,
        None => q_mean,
    };
    let d2 = g.square(diff);
    let quad = g.add(var, d2)?;
    let s_quad = g.sum(quad);
    let s_log = g.sum(q_log_std);
    let kl = g.lincomb(&[(s_quad, 0.5 / (p_std * p_std)), (s_log, -1.0)])?;
    let out = g.shift(kl, n * (p_std.ln() - 0.5));
    debug_assert!(g.scalar(out) >= -1e-9 * n.max(1.0), "negative KL {}", g.scalar(out));
    Ok(out)
}

/// Continuity penalty for block `b >= 2`: flow the previous shooting state to the
/// anchor time and compare with `q(s_b)` under an isotropic `sigma_c` prior.
#[allow(clippy::too_many_arguments)]
pub fn continuity_term(
    g: &mut Graph,
    rhs: &dyn Rhs,
    s_prev: Var,
    t_prev: f64,
    t_anchor: f64,
    q_mean: Var,
    q_log_std: Var,
    sigma_c: f64,
    solver: &SolverConfig,
) -> Result<Var> {
    let mu = odesolve(g, rhs, s_prev, t_prev, t_anchor, solver)?;
    kl_to_isotropic(g, q_mean, q_log_std, Some(mu), sigma_c)
}

/// `sum log N(obs | pred, sigma_u^2)` over all entries.
pub fn gaussian_log_likelihood(g: &mut Graph, pred: Var, obs: Var, sigma_u: f64) -> Result<Var> {
    contract!(sigma_u > 0.0, "sigma_u must be positive");
    let n = g.value(pred).len() as f64;
    let diff = g.sub(pred, obs)?;
    let sq = g.square(diff);
    let s = g.sum(sq);
    let scaled = g.scale(s, -0.5 / (sigma_u * sigma_u));
    Ok(g.shift(scaled, -n * (sigma_u.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    fn gp(mean: Vec<f64>, std: Vec<f64>) -> GaussianParams {
        GaussianParams {
            mean: Tensor::vector(mean),
            std: Tensor::vector(std),
        }
    }

    #[test]
    fn partition_examples() {
        let t: Vec<f64> = (0..25).map(|i| i as f64).collect();
        let p = make_partition(&t[..6], 6).unwrap();
        assert_eq!(p.blocks, vec![(0..6).collect::<Vec<_>>()]);
        assert_eq!(p.anchors, vec![0]);

        let p = make_partition(&t, 6).unwrap();
        let sizes: Vec<usize> = p.blocks.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![6, 6, 6, 6, 1]);
        assert_eq!(p.anchor_times(&t)[1], t[5]);
        assert_eq!(p.anchors, vec![0, 5, 11, 17, 23]);

        let p = make_partition(&t[..20], 2).unwrap();
        assert_eq!(p.len(), 10);
        assert!(make_partition(&t, 0).is_err());
        assert!(make_partition(&t[..3], 4).is_err());
    }

    #[test]
    fn kl_examples() {
        let q = gp(vec![0.3, -1.0], vec![0.5, 2.0]);
        assert_eq!(kl_diag_gaussian(&q, &q).unwrap(), 0.0);
        let v = kl_diag_gaussian(&gp(vec![1.0], vec![1.0]), &gp(vec![0.0], vec![1.0])).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert!(kl_diag_gaussian(&gp(vec![1.0], vec![0.0]), &gp(vec![0.0], vec![1.0])).is_err());
    }

    #[test]
    fn graph_kl_matches_closed_form() {
        let mut g = Graph::new();
        let qm = g.constant(&Tensor::vector(vec![0.2, -0.7, 1.5]));
        let qls = g.constant(&Tensor::vector(vec![-1.0, 0.3, 0.0]));
        let pm = g.constant(&Tensor::vector(vec![0.1, 0.0, 1.0]));
        let kl = kl_to_isotropic(&mut g, qm, qls, Some(pm), 0.4).unwrap();
        let want = kl_diag_gaussian(
            &gp(vec![0.2, -0.7, 1.5], vec![(-1.0f64).exp(), 0.3f64.exp(), 1.0]),
            &gp(vec![0.1, 0.0, 1.0], vec![0.4; 3]),
        )
        .unwrap();
        assert!((g.scalar(kl) - want).abs() < 1e-12);
    }

    #[test]
    fn perfect_reconstruction_likelihood() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::vector(vec![0.1, 0.5, 0.9, 0.2]));
        let ll = gaussian_log_likelihood(&mut g, x, x, 1.0).unwrap();
        let want = -(4.0 / 2.0) * (2.0 * std::f64::consts::PI).ln();
        assert!((g.scalar(ll) - want).abs() < 1e-12);
    }

    #[test]
    fn smaller_sigma_c_increases_the_penalty() {
        // holds while sigma_c^2 < tau^2 + (gamma - mu)^2
        let vals: Vec<f64> = [0.2, 0.1, 0.05, 0.02]
            .iter()
            .map(|&s| kl_diag_gaussian(&gp(vec![0.3], vec![0.05]), &gp(vec![0.1], vec![s])).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]), "{vals:?}");
    }
}
