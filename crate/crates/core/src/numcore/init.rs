//! Parameter initialisation, Gaussian noise, and reparameterised sampling.

use rand::Rng as _;
use rand::SeedableRng;
use rand_distr::StandardNormal;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{contract, Result};

/// Deterministic generator used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Glorot/Xavier uniform initialisation.
///
/// For a matrix shape `(fan_in, fan_out, ..)` values lie in `±sqrt(6 / (fan_in + fan_out))`;
/// a one-dimensional shape uses `fan_in = 1`, `fan_out = len`.
pub fn xavier_init(shape: &[usize], rng: &mut Rng) -> Result<Tensor> {
    contract!(!shape.is_empty(), "xavier_init needs at least one dimension");
    contract!(
        shape.iter().all(|&d| d > 0),
        "xavier_init got zero-sized dimension in {:?}",
        shape
    );
    let (fan_in, fan_out) = if shape.len() == 1 {
        (1, shape[0])
    } else {
        let receptive: usize = shape[2..].iter().product();
        (shape[0] * receptive, shape[1] * receptive)
    };
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data)
}

pub fn standard_normal(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

/// `mean + std * noise`, differentiable in `mean` and `std`.
pub fn reparam_sample(g: &mut Graph, mean: Var, std: Var, noise: &Tensor) -> Result<Var> {
    contract!(
        g.value(mean).len() == g.value(std).len() && g.value(mean).len() == noise.len(),
        "reparam_sample: shapes {:?}, {:?}, {:?} disagree",
        g.shape(mean),
        g.shape(std),
        noise.shape()
    );
    contract!(
        g.value(std).iter().all(|&s| s > 0.0),
        "reparam_sample: std must be strictly positive"
    );
    let eps = g.constant(noise);
    let scaled = g.mul(std, eps)?;
    g.add(mean, scaled)
}

/// Sample parameterised by log-std: `mean + exp(log_std) * noise`.
pub fn reparam_sample_log_std(g: &mut Graph, mean: Var, log_std: Var, noise: &Tensor) -> Result<Var> {
    let std = g.exp(log_std);
    reparam_sample(g, mean, std, noise)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_bounds_and_determinism() {
        let mut rng = rng_from_seed(3);
        let t = xavier_init(&[100, 100], &mut rng).unwrap();
        let b = (6.0f64 / 200.0).sqrt();
        assert!((b - 0.1732).abs() < 1e-4);
        assert!(t.data().iter().all(|v| v.abs() <= b));
        let t2 = xavier_init(&[100, 100], &mut rng_from_seed(3)).unwrap();
        assert_eq!(t, t2);
        let one = xavier_init(&[1, 1], &mut rng).unwrap();
        assert!(one.data()[0].abs() <= 3f64.sqrt());
    }

    #[test]
    fn xavier_rejects_zero_dimension() {
        let mut rng = rng_from_seed(0);
        assert!(xavier_init(&[3, 0], &mut rng).is_err());
        assert!(xavier_init(&[], &mut rng).is_err());
    }

    #[test]
    fn reparam_examples() {
        let mut g = Graph::new();
        let m = g.param(&Tensor::vector(vec![1.0, 2.0]));
        let s = g.param(&Tensor::vector(vec![0.1, 0.1]));
        let z = reparam_sample(&mut g, m, s, &Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert_eq!(g.value(z), &[1.0, 2.0]);

        let m = g.param(&Tensor::vector(vec![0.0]));
        let s = g.param(&Tensor::vector(vec![2.0]));
        let z = reparam_sample(&mut g, m, s, &Tensor::vector(vec![1.5])).unwrap();
        assert_eq!(g.value(z), &[3.0]);
        let root = g.sum(z);
        let grads = g.backward(root).unwrap();
        assert_eq!(grads.get(m), vec![1.0]);
        assert_eq!(grads.get(s), vec![1.5]);
    }

    #[test]
    fn reparam_rejects_non_positive_std() {
        let mut g = Graph::new();
        let m = g.param(&Tensor::vector(vec![0.0]));
        let s = g.param(&Tensor::vector(vec![0.0]));
        assert!(reparam_sample(&mut g, m, s, &Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn reparam_monte_carlo_mean() {
        let mut rng = rng_from_seed(11);
        let n = 1_000_000;
        let noise = standard_normal(&[n], &mut rng);
        let mut g = Graph::new();
        let m = g.constant(&Tensor::full(&[n], 3.0));
        let s = g.constant(&Tensor::full(&[n], 0.5));
        let z = reparam_sample(&mut g, m, s, &noise).unwrap();
        let mean = g.value(z).iter().sum::<f64>() / n as f64;
        assert!((mean - 3.0).abs() < 3.0 * 0.5 / 1e3, "mean {mean}");
    }
}
