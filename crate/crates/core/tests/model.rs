use lnpde::encoder::{encode, EncoderVars};
use lnpde::gradcheck::{elbo_check, tiny_model_config};
use lnpde::model::Model;
use lnpde::numcore::{rng_from_seed, standard_normal, Graph, ParamStore, Tensor};
use lnpde::spatial::{Domain, Point, SpatialGrid};
use lnpde::variational::make_partition;
use rand::Rng;

fn grid(n: usize, seed: u64) -> SpatialGrid {
    let mut rng = rng_from_seed(seed);
    let pts: Vec<Point> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
    SpatialGrid::new(pts, Domain::unit_periodic()).unwrap()
}

#[test]
fn elbo_gradient_matches_finite_differences() {
    let r = elbo_check(2).unwrap();
    assert!(
        r.passed(),
        "max relative error {:e} over {} parameters",
        r.max_rel_error,
        r.n_params
    );
    assert!(r.n_params > 200);
}

#[test]
fn elbo_terms_have_the_expected_signs_and_scale() {
    let model = Model::new(tiny_model_config(), grid(12, 1)).unwrap();
    let mut rng = rng_from_seed(2);
    let store = model.init_params(&mut rng).unwrap();
    let times: Vec<f64> = (0..6).map(|i| 0.05 * i as f64).collect();
    let obs: Vec<f64> = standard_normal(&[72], &mut rng)
        .data()
        .iter()
        .map(|v| 0.1 * v)
        .collect();
    let input = model.encoder_input(&obs, &times).unwrap();
    let part = make_partition(&times, 3).unwrap();
    assert_eq!(part.len(), 2);
    let noise = model.draw_noise(part.len(), &mut rng);
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let (loss, terms) = model.elbo(&mut g, &bound, &input, &obs, &part, &noise).unwrap();
    assert_eq!(g.scalar(loss), terms.loss);
    assert!((terms.loss + terms.elbo / 72.0).abs() <= 1e-14 * terms.loss.abs());
    assert!(terms.continuity > 0.0 && terms.init_kl > 0.0 && terms.dyn_kl > 0.0);
    assert_eq!(terms.dec_kl, 0.0);
}

#[test]
fn zero_readout_gives_standard_normal_and_large_negative_bias_collapses_std() {
    let model = Model::new(tiny_model_config(), grid(10, 3)).unwrap();
    let mut store = model.init_params(&mut rng_from_seed(4)).unwrap();
    for name in [
        "enc.read.mean.w",
        "enc.read.mean.b",
        "enc.read.log_std.w",
        "enc.read.log_std.b",
    ] {
        let t = store.get_mut(name).unwrap();
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let times = [0.0, 0.1, 0.2];
    let obs = vec![0.5; 30];
    let input = model.encoder_input(&obs, &times).unwrap();
    let run = |store: &ParamStore| {
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let vars = EncoderVars::bind(&bound, &model.cfg.encoder).unwrap();
        let q = encode(&mut g, &vars, &model.cfg.encoder, &input, &[1]).unwrap();
        (g.value(q[0].0).to_vec(), g.value(q[0].1).to_vec())
    };
    let (mean, std) = run(&store);
    assert!(mean.iter().all(|v| *v == 0.0));
    assert!(std.iter().all(|v| *v == 1.0));

    store.get_mut("enc.read.log_std.b").unwrap().data_mut().fill(-20.0);
    let (_, std) = run(&store);
    assert!(std.iter().all(|v| (v - 2.061_153_622_438_558e-9).abs() < 1e-20));
}

fn encode_values(model: &Model, store: &ParamStore, obs: &[f64], times: &[f64], anchors: &[usize]) -> Vec<Vec<f64>> {
    let input = model.encoder_input(obs, times).unwrap();
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let vars = EncoderVars::bind(&bound, &model.cfg.encoder).unwrap();
    encode(&mut g, &vars, &model.cfg.encoder, &input, anchors)
        .unwrap()
        .into_iter()
        .flat_map(|(m, s)| [g.value(m).to_vec(), g.value(s).to_vec()])
        .collect()
}

#[test]
fn encoder_is_bitwise_invariant_to_global_time_shift() {
    let model = Model::new(tiny_model_config(), grid(9, 5)).unwrap();
    let store = model.init_params(&mut rng_from_seed(6)).unwrap();
    let times: Vec<f64> = [0, 3, 5, 6, 11, 16, 17].iter().map(|&k| k as f64 / 64.0).collect();
    let obs = standard_normal(&[times.len() * 9], &mut rng_from_seed(7)).into_data();
    let base = encode_values(&model, &store, &obs, &times, &[0, 3, 6]);
    for shift in [0.5, 3.0, -0.25] {
        let moved: Vec<f64> = times.iter().map(|t| t + shift).collect();
        assert_eq!(base, encode_values(&model, &store, &obs, &moved, &[0, 3, 6]));
    }
}

#[test]
fn encoder_ignores_observations_outside_the_attention_cone() {
    let model = Model::new(tiny_model_config(), grid(9, 8)).unwrap();
    let store = model.init_params(&mut rng_from_seed(9)).unwrap();
    let times = [0.0, 0.1, 0.2, 0.35, 0.6, 0.9];
    let mut obs = standard_normal(&[6 * 9], &mut rng_from_seed(10)).into_data();
    let base = encode_values(&model, &store, &obs, &times, &[2]);
    // delta_t = 0.3 around t = 0.2 covers indices 0..=3
    for v in &mut obs[4 * 9..] {
        *v += 5.0;
    }
    assert_eq!(base, encode_values(&model, &store, &obs, &times, &[2]));
    obs[3 * 9] += 1.0;
    assert_ne!(base, encode_values(&model, &store, &obs, &times, &[2]));
}

#[test]
fn zero_noise_elbo_is_deterministic_and_errors_name_the_block() {
    let model = Model::new(tiny_model_config(), grid(8, 11)).unwrap();
    let store = model.init_params(&mut rng_from_seed(12)).unwrap();
    let times = [0.0, 0.1, 0.2, 0.3];
    let obs = vec![0.2; 32];
    let input = model.encoder_input(&obs, &times).unwrap();
    let part = make_partition(&times, 2).unwrap();
    let noise = model.zero_noise(part.len());
    let eval = || {
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        model.elbo(&mut g, &bound, &input, &obs, &part, &noise).unwrap().1
    };
    assert_eq!(eval(), eval());

    let bad = lnpde::model::ElboNoise {
        params: noise.params.clone(),
        states: vec![Tensor::zeros(&[8, 2])],
    };
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    assert!(model.elbo(&mut g, &bound, &input, &obs, &part, &bad).is_err());
}
