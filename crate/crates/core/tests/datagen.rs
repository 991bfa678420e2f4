use lnpde::datagen::{
    design_coords, make_dataset, resample_test, sample_bilinear, sample_initial_height, solve_shallow_water,
    total_mass, FourierField, SwConfig,
};
use lnpde::formats::Dataset;
use lnpde::numcore::rng_from_seed;

fn tiny() -> SwConfig {
    SwConfig {
        resolution: 24,
        n_train: 3,
        n_val: 1,
        n_test: 2,
        n_points: 40,
        n_times: 6,
        seed: 11,
        ..SwConfig::desk()
    }
}

#[test]
fn mass_is_conserved() {
    let cfg = SwConfig {
        resolution: 48,
        ..SwConfig::default()
    };
    for seed in 0..3 {
        let (_, h0) = sample_initial_height(&cfg, &mut rng_from_seed(seed)).unwrap();
        let sol = solve_shallow_water(&h0, &cfg, &[0.05, 0.1]).unwrap();
        let m0 = total_mass(&h0, 48);
        for s in &sol.states {
            let rel = (total_mass(&s.h, 48) - m0).abs() / m0;
            assert!(rel < 1e-3, "seed {seed}: relative mass change {rel:e}");
        }
    }
}

/// Solution at `t = 0.1` on a `res` grid from the same Fourier initial condition.
fn height_at_final(field: &FourierField, res: usize) -> Vec<f64> {
    let cfg = SwConfig {
        resolution: res,
        ..SwConfig::default()
    };
    let raw = field.on_grid(res);
    let h0 = lnpde::datagen::normalize_height(&raw).unwrap();
    solve_shallow_water(&h0, &cfg, &[0.1]).unwrap().states.remove(0).h
}

#[test]
fn solver_converges_under_refinement() {
    let field = FourierField::random(3, &mut rng_from_seed(5));
    let sols: Vec<(usize, Vec<f64>)> = [32, 64, 128].iter().map(|&r| (r, height_at_final(&field, r))).collect();
    let pts: Vec<[f64; 2]> = (0..32 * 32)
        .map(|i| [(i % 32) as f64 / 32.0, (i / 32) as f64 / 32.0])
        .collect();
    let at = |k: usize| -> Vec<f64> {
        let (r, h) = &sols[k];
        pts.iter().map(|&p| sample_bilinear(h, *r, p)).collect()
    };
    let (a, b, c) = (at(0), at(1), at(2));
    let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let coarse = diff(&a, &b);
    let fine = diff(&b, &c);
    assert!(fine < coarse, "64 vs 128: {fine:e}, 32 vs 64: {coarse:e}");
    assert!(coarse / fine > 2.5, "convergence ratio {}", coarse / fine);
}

#[test]
fn datasets_are_deterministic_normalised_and_shared() {
    let a = make_dataset(&tiny()).unwrap();
    let b = make_dataset(&tiny()).unwrap();
    for (x, y) in [(&a.train, &b.train), (&a.val, &b.val), (&a.test, &b.test)] {
        assert_eq!(x.to_bytes().unwrap(), y.to_bytes().unwrap());
    }
    let all: Vec<f64> = [&a.train, &a.val, &a.test].iter().flat_map(|d| d.obs.clone()).collect();
    assert!(all.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(all.iter().any(|&v| v == 0.0) && all.iter().any(|&v| v == 1.0));
    assert_eq!(a.train.coords, a.test.coords);
    assert_eq!(a.train.times, a.val.times);
    assert_eq!(a.train.times[0], 0.0);
    assert!(a.train.times.iter().all(|t| (0.0..=1.0).contains(t)));
    assert_eq!(a.train.n_traj, 3);
    assert_eq!(a.test.n_traj, 2);
    assert!(a.test_clean.is_none());
    assert_eq!(design_coords(&tiny()), a.train.coords);
}

#[test]
fn files_round_trip_bitwise() {
    let splits = make_dataset(&tiny()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = splits.write(dir.path()).unwrap();
    assert_eq!(paths.len(), 3);
    let back = Dataset::load(&paths[0]).unwrap();
    assert_eq!(back, splits.train);
    assert_eq!(std::fs::read(&paths[0]).unwrap(), back.to_bytes().unwrap());
}

#[test]
fn noise_has_the_configured_std() {
    let sigma = 0.05;
    let cfg = SwConfig {
        noise_std: sigma,
        n_points: 200,
        n_times: 10,
        ..tiny()
    };
    let s = make_dataset(&cfg).unwrap();
    let clean = s.test_clean.as_ref().unwrap();
    let resid: Vec<f64> = s.test.obs.iter().zip(&clean.obs).map(|(a, b)| a - b).collect();
    let n = resid.len() as f64;
    let mean = resid.iter().sum::<f64>() / n;
    let std = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(
        (std - sigma).abs() / sigma < 0.05,
        "empirical std {std} from {n} values"
    );
    let noiseless = make_dataset(&SwConfig { noise_std: 0.0, ..cfg }).unwrap();
    assert_eq!(noiseless.test.obs, clean.obs);
}

#[test]
fn resampling_at_original_coords_reproduces_the_test_split() {
    let cfg = tiny();
    let s = make_dataset(&cfg).unwrap();
    let again = resample_test(&cfg, &s.test.coords).unwrap();
    assert_eq!(again.obs, s.test.obs);
    let sub: Vec<[f64; 2]> = s.test.coords.iter().step_by(2).copied().collect();
    let half = resample_test(&cfg, &sub).unwrap();
    for t in 0..cfg.n_times {
        for (k, j) in (0..cfg.n_points).step_by(2).enumerate() {
            assert_eq!(
                half.trajectory(1)[t * sub.len() + k],
                s.test.trajectory(1)[t * cfg.n_points + j]
            );
        }
    }
}

#[test]
fn diffusion_generator_matches_exact_decay() {
    let cfg = SwConfig::diffusion();
    let s = make_dataset(&cfg).unwrap();
    assert_eq!(s.train.n_traj, 8);
    // the spatial mean of each frame is preserved by the heat equation
    let tr = s.train.trajectory(0);
    let n = s.train.n_nodes();
    let var = |f: &[f64]| {
        let m = f.iter().sum::<f64>() / n as f64;
        f.iter().map(|v| (v - m).powi(2)).sum::<f64>()
    };
    let first = var(&tr[..n]);
    let last = var(&tr[(cfg.n_times - 1) * n..]);
    assert!(last < first, "variance should decay: {first} -> {last}");
}

#[test]
fn generator_config_is_recovered_from_metadata() {
    let cfg = SwConfig {
        noise_std: 0.02,
        ..tiny()
    };
    let s = make_dataset(&cfg).unwrap();
    assert_eq!(lnpde::datagen::generator_config(&s.val).unwrap(), cfg);
    let mut bare = s.val.clone();
    bare.meta.clear();
    assert!(lnpde::datagen::generator_config(&bare).is_err());
}
