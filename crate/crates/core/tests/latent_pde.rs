use lnpde::latent_pde::{
    dynamics_operator, dynamics_rhs, solve, Dynamics, DynamicsConfig, MlpVars, Rhs, SolverConfig, SolverMethod,
};
use lnpde::numcore::{rng_from_seed, standard_normal, Graph, Tensor, Var};
use lnpde::oracles::{expm_apply, fd_gradient, max_relative_error};
use lnpde::spatial::{Domain, Point, SpatialGrid};
use lnpde::Result;
use proptest::prelude::*;
use rand::Rng;

struct Linear(Tensor);

impl Rhs for Linear {
    fn eval(&self, g: &mut Graph, _t: f64, z: Var) -> Result<Var> {
        let a = g.constant(&self.0);
        g.matmul(a, z)
    }
}

/// `0.9 R / |R|_F - I`: eigenvalues inside the disc of radius 0.9 around -1.
fn stable_matrix(seed: u64) -> Tensor {
    let r = standard_normal(&[4, 4], &mut rng_from_seed(seed));
    let norm = r.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut a: Vec<f64> = r.data().iter().map(|x| 0.9 * x / norm).collect();
    for i in 0..4 {
        a[i * 5] -= 1.0;
    }
    Tensor::matrix(4, 4, a).unwrap()
}

fn run_linear(a: &Tensor, z0: &[f64], t: f64, cfg: &SolverConfig) -> Vec<f64> {
    let mut g = Graph::new();
    let z = g.constant(&Tensor::matrix(z0.len(), 1, z0.to_vec()).unwrap());
    let (out, _) = solve(&mut g, &Linear(a.clone()), z, 0.0, &[t], cfg).unwrap();
    g.value(out[0]).to_vec()
}

#[test]
fn dopri5_matches_matrix_exponential() {
    let cfg = SolverConfig {
        rtol: 1e-6,
        atol: 1e-8,
        ..Default::default()
    };
    for seed in 0..20 {
        let a = stable_matrix(seed);
        let z0 = [1.0, -0.5, 0.25, 2.0];
        let got = run_linear(&a, &z0, 0.5, &cfg);
        let want = expm_apply(a.data(), 4, 0.5, &z0);
        let err = max_relative_error(&got, &want, 1e-3);
        assert!(err < 1e-5, "seed {seed}: {err:e}");
    }
}

#[test]
fn rk4_is_fourth_order() {
    let a = stable_matrix(7);
    let z0 = [1.0, 0.3, -0.2, 0.5];
    let want = expm_apply(a.data(), 4, 1.0, &z0);
    let err = |h: f64| {
        let cfg = SolverConfig {
            method: SolverMethod::Rk4,
            step: h,
            ..Default::default()
        };
        let got = run_linear(&a, &z0, 1.0, &cfg);
        got.iter().zip(&want).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    let ratio = err(0.1) / err(0.05);
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

fn grid(seed: u64, n: usize, domain: Domain) -> SpatialGrid {
    let mut rng = rng_from_seed(seed);
    let pts: Vec<Point> = (0..n)
        .map(|_| {
            [
                domain.lo[0] + rng.random::<f64>() * domain.extent(0),
                domain.lo[1] + rng.random::<f64>() * domain.extent(1),
            ]
        })
        .collect();
    SpatialGrid::new(pts, domain).unwrap()
}

fn mlp_tensors(cfg: &DynamicsConfig, seed: u64) -> Vec<Tensor> {
    cfg.mlp_spec().init(&mut rng_from_seed(seed)).unwrap()
}

fn dynamics_on(g: &mut Graph, grid: &SpatialGrid, cfg: &DynamicsConfig, ts: &[Tensor]) -> Dynamics {
    let vars: Vec<Var> = ts.iter().map(|t| g.param(t)).collect();
    let mlp = MlpVars::new(g, &cfg.mlp_spec(), &vars).unwrap();
    Dynamics::new(dynamics_operator(grid, cfg).unwrap(), cfg, mlp).unwrap()
}

fn small_cfg() -> DynamicsConfig {
    DynamicsConfig {
        hidden: vec![16, 16],
        latent_dim: 2,
        ..Default::default()
    }
}

fn rhs_values(grid: &SpatialGrid, cfg: &DynamicsConfig, ts: &[Tensor], z: &Tensor) -> Vec<f64> {
    let mut g = Graph::new();
    let dy = dynamics_on(&mut g, grid, cfg, ts);
    let zv = g.constant(z);
    let r = dynamics_rhs(&mut g, &dy, zv).unwrap();
    g.value(r).to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rhs_is_translation_invariant(
        seed in 0u64..500,
        dx in -3.0f64..3.0,
        dy in -3.0f64..3.0,
        periodic in any::<bool>(),
    ) {
        let domain = if periodic { Domain::unit_periodic() } else { Domain::unit() };
        let g0 = grid(seed, 30, domain);
        let g1 = g0.translated([dx, dy]).unwrap();
        let cfg = small_cfg();
        let ts = mlp_tensors(&cfg, seed + 1);
        let z = standard_normal(&[30, 2], &mut rng_from_seed(seed + 2));
        let a = rhs_values(&g0, &cfg, &ts, &z);
        let b = rhs_values(&g1, &cfg, &ts, &z);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9, "{} vs {}", x, y);
        }
    }

    #[test]
    fn rhs_is_permutation_equivariant(seed in 0u64..500) {
        let g0 = grid(seed, 25, Domain::unit_periodic());
        let mut perm: Vec<usize> = (0..25).collect();
        let mut rng = rng_from_seed(seed + 9);
        for i in (1..25).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let g1 = g0.subset(&perm).unwrap();
        let cfg = small_cfg();
        let ts = mlp_tensors(&cfg, seed + 1);
        let z = standard_normal(&[25, 2], &mut rng_from_seed(seed + 2));
        let mut zp = Vec::new();
        for &p in &perm {
            zp.extend_from_slice(&z.data()[p * 2..p * 2 + 2]);
        }
        let a = rhs_values(&g0, &cfg, &ts, &z);
        let b = rhs_values(&g1, &cfg, &ts, &Tensor::matrix(25, 2, zp).unwrap());
        for (i, &p) in perm.iter().enumerate() {
            for c in 0..2 {
                prop_assert!((b[i * 2 + c] - a[p * 2 + c]).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn solution_gradient_wrt_initial_state() {
    let gr = grid(3, 4, Domain::unit_periodic());
    let cfg = small_cfg();
    let ts = mlp_tensors(&cfg, 5);
    let solver = SolverConfig {
        rtol: 1e-9,
        atol: 1e-11,
        ..Default::default()
    };
    let z0 = standard_normal(&[4, 2], &mut rng_from_seed(6));
    let w = standard_normal(&[4, 2], &mut rng_from_seed(7));
    let loss = |z: &Tensor, with_grad: bool| -> (f64, Vec<f64>) {
        let mut g = Graph::new();
        let dy = dynamics_on(&mut g, &gr, &cfg, &ts);
        let zv = g.param(z);
        let (out, _) = solve(&mut g, &dy, zv, 0.0, &[0.3], &solver).unwrap();
        let wv = g.constant(&w);
        let m = g.mul(out[0], wv).unwrap();
        let s = g.sum(m);
        let grad = if with_grad {
            g.backward(s).unwrap().get(zv)
        } else {
            Vec::new()
        };
        (g.scalar(s), grad)
    };
    let (_, tape) = loss(&z0, true);
    let fd = fd_gradient(
        |th| loss(&Tensor::matrix(4, 2, th.to_vec()).unwrap(), false).0,
        z0.data(),
        1e-5,
    );
    let err = max_relative_error(&tape, &fd, 1e-6);
    assert!(err <= 1e-4, "{err:e}\n{tape:?}\n{fd:?}");
}
