use lnpde::config::{format_kv, parse_kv, KeyValue};
use lnpde::datagen::{make_dataset, SwConfig};
use lnpde::formats::{Checkpoint, Dataset};
use lnpde::model::Model;
use lnpde::numcore::rng_from_seed;
use lnpde::oracles::{frames_mae, persistence_forecast};
use lnpde::trainer::{
    ablate, mae_with, persistence_mae, train, train_with, validate, write_log_csv, TrainConfig, LOG_HEADER,
};
use lnpde::Error;

fn data() -> (Dataset, Dataset, Dataset) {
    let cfg = SwConfig {
        resolution: 24,
        n_train: 3,
        n_val: 2,
        n_test: 2,
        n_points: 30,
        n_times: 8,
        seed: 3,
        ..SwConfig::desk()
    };
    let s = make_dataset(&cfg).unwrap();
    (s.train, s.val, s.test)
}

fn small(iterations: usize) -> TrainConfig {
    let mut cfg = TrainConfig {
        iterations,
        block_len: 3,
        eval_interval: 10,
        context: 3,
        warmup: 5,
        lr: 1e-3,
        seed: 21,
        ..TrainConfig::default()
    };
    let text = "dynamics.hidden=8\ndynamics.latent_dim=2\nencoder.embed=4\nencoder.layers=1\nencoder.heads=2\n";
    cfg.apply(&parse_kv(text).unwrap()).unwrap();
    cfg
}

#[test]
fn warmup_is_linear_then_constant() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr_at(100), 1.5e-4);
    assert_eq!(cfg.lr_at(200), 3e-4);
    assert_eq!(cfg.lr_at(5000), 3e-4);
    for it in [1, 7, 150, 199] {
        assert_eq!(cfg.lr_at(it), 3e-4 * (it as f64 / 200.0));
    }
}

#[test]
fn zero_iterations_return_the_initialisation() {
    let (tr, va, _) = data();
    let cfg = small(0);
    let out = train(&tr, &va, &cfg).unwrap();
    let model = Model::new(cfg.model.clone(), tr.grid().unwrap()).unwrap();
    let init = model.init_params(&mut rng_from_seed(cfg.seed)).unwrap();
    assert_eq!(out.best.params, init);
    assert_eq!(out.last, init);
    assert!(out.best.best_val_mae.is_nan());
    assert!(out.log.is_empty());
}

#[test]
fn same_seed_runs_are_bitwise_identical() {
    let (tr, va, _) = data();
    let cfg = small(50);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let run = || pool.install(|| train(&tr, &va, &cfg).unwrap());
    let (a, b) = (run(), run());
    let losses = |o: &lnpde::trainer::TrainOutcome| o.log.iter().map(|r| r.terms.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(a.last, b.last);
    assert_eq!(a.best.to_bytes().unwrap(), b.best.to_bytes().unwrap());
    assert_eq!(a.log.len(), 50);
    assert!(a.log.iter().all(|r| r.terms.loss.is_finite()));
    let threaded = train(&tr, &va, &cfg).unwrap();
    assert_eq!(losses(&a), losses(&threaded));
}

#[test]
fn checkpoint_round_trip_reproduces_the_validation_mae() {
    let (tr, va, _) = data();
    let cfg = small(20);
    let mut rows = 0;
    let out = train_with(&tr, &va, &cfg, |_| rows += 1).unwrap();
    assert_eq!(rows, 20);
    assert_eq!(out.log.iter().filter(|r| r.val_mae.is_some()).count(), 2);
    let best_logged = out.log.iter().filter_map(|r| r.val_mae).fold(f64::INFINITY, f64::min);
    assert_eq!(out.best.best_val_mae, best_logged);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.lnpck");
    out.best.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, out.best);
    assert_eq!(back.to_bytes().unwrap(), std::fs::read(&path).unwrap());

    let model = Model::new(back.config.model.clone(), va.grid().unwrap()).unwrap();
    let mae = validate(&model, &back.params, &va, back.config.context, back.config.val_seed()).unwrap();
    assert_eq!(mae, back.best_val_mae);

    let log = dir.path().join("log.csv");
    write_log_csv(&out.log, &log).unwrap();
    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], LOG_HEADER);
    assert_eq!(lines.len(), 21);
    assert!(lines[10].ends_with(&format!(",{:?}", out.log[9].val_mae.unwrap())));
    assert!(lines[1].ends_with(','));
}

#[test]
fn config_text_round_trips() {
    let mut cfg = small(7);
    cfg.clip_norm = None;
    let text = format_kv(&cfg.pairs());
    let mut back = TrainConfig::default();
    back.apply(&parse_kv(&text).unwrap()).unwrap();
    assert_eq!(back, cfg);
    let mut bad = TrainConfig::default();
    bad.set("lr", "0").unwrap();
    assert!(bad.validate().is_err());
    assert_eq!(TrainConfig::preset("desk-sw").unwrap().iterations, 3000);
    assert!(TrainConfig::preset("nope").is_err());
}

#[test]
fn mae_examples() {
    let (_, _, test) = data();
    let m = 3;
    let frame = test.frame_len();
    let exact = mae_with(&test, &test, m, |i, _, _, targets| {
        assert_eq!(targets, &test.times[m..]);
        Ok(test.trajectory(i)[m * frame..].to_vec())
    })
    .unwrap();
    assert_eq!(exact.mae, 0.0);

    let zero = mae_with(&test, &test, m, |_, _, _, t| Ok(vec![0.0; t.len() * frame])).unwrap();
    let tail: Vec<f64> = (0..test.n_traj)
        .flat_map(|i| test.trajectory(i)[m * frame..].to_vec())
        .collect();
    let mean_abs = tail.iter().map(|v| v.abs()).sum::<f64>() / tail.len() as f64;
    assert!((zero.mae - mean_abs).abs() < 1e-14);

    let ours = persistence_mae(&test, &test, m).unwrap();
    let frames = |i: usize| -> Vec<Vec<f64>> { test.trajectory(i).chunks(frame).map(<[f64]>::to_vec).collect() };
    let mut per = Vec::new();
    for i in 0..test.n_traj {
        let f = frames(i);
        let pred = persistence_forecast(&f[..m], f.len() - m);
        per.push(frames_mae(&pred, &f[m..]));
    }
    let oracle = per.iter().sum::<f64>() / per.len() as f64;
    assert!((ours.mae - oracle).abs() < 1e-14);
    for (a, b) in ours.per_trajectory.iter().zip(&per) {
        assert!((a - b).abs() < 1e-14);
    }
    assert!(ours.mae > 0.0 && ours.std_err() >= 0.0);
    assert!(mae_with(&test, &test, test.n_times(), |_, _, _, _| Ok(vec![])).is_err());
}

#[test]
fn exploding_losses_are_reported_as_divergence_with_the_iteration() {
    let (mut tr, va, _) = data();
    tr.obs.iter_mut().for_each(|v| *v = 1e300);
    let err = train(&tr, &va, &small(3)).unwrap_err();
    assert!(matches!(err, Error::AtIteration { iteration: 1, .. }), "{err}");
    assert!(matches!(err.root(), Error::LossDivergence(_)), "{err}");
}

#[test]
fn ablation_gives_one_row_per_value() {
    let (tr, va, te) = data();
    let values = vec!["2".to_string(), "7".to_string()];
    let rows = ablate(&small(4), "block_len", &values, &tr, &va, &te, &te).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].value, "7");
    assert!(rows
        .iter()
        .all(|r| r.test_mae.is_finite() && r.val_mae.is_finite() && r.seconds_per_iteration > 0.0));
    assert!(ablate(&small(1), "no.such.key", &values, &tr, &va, &te, &te).is_err());
}
