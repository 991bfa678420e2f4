use lnpde::numcore::{rng_from_seed, Tensor};
use lnpde::spatial::{
    build_interpolant, eval_neighborhood, Domain, InterpMethod, Interpolator, Point, SpatialGrid, Stencil,
};
use proptest::prelude::*;
use rand::Rng;

fn random_grid(seed: u64, n: usize, domain: Domain) -> SpatialGrid {
    let mut rng = rng_from_seed(seed);
    let mut pts: Vec<Point> = if domain.periodic[0] {
        Vec::new()
    } else {
        vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
    };
    while pts.len() < n {
        pts.push([rng.random::<f64>(), rng.random::<f64>()]);
    }
    SpatialGrid::new(pts, domain).unwrap()
}

fn values_of(grid: &SpatialGrid, f: impl Fn(Point) -> f64) -> Tensor {
    Tensor::new(vec![grid.len(), 1], grid.points().iter().map(|p| f(*p)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn affine_fields_are_reproduced(
        seed in 0u64..1000,
        n in 8usize..80,
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
        c in 1.0f64..10.0,
        qx in 0.0f64..1.0,
        qy in 0.0f64..1.0,
    ) {
        let g = random_grid(seed, n, Domain::unit());
        let f = |p: Point| a * p[0] + b * p[1] + c;
        let it = build_interpolant(g.clone(), values_of(&g, f), InterpMethod::Linear).unwrap();
        let v = it.evaluate([qx, qy]).unwrap()[0];
        let scale = a.abs() + b.abs() + c.abs();
        prop_assert!((v - f([qx, qy])).abs() <= 1e-12 * scale);
    }

    #[test]
    fn nodes_are_exact(seed in 0u64..1000, n in 3usize..60, periodic in any::<bool>()) {
        let d = if periodic { Domain::unit_periodic() } else { Domain::unit() };
        let g = random_grid(seed, n.max(5), d);
        let vals = values_of(&g, |p| (5.0 * p[0]).sin() * (3.0 * p[1]).cos());
        for m in [InterpMethod::Linear, InterpMethod::Idw, InterpMethod::Knn(1)] {
            let it = build_interpolant(g.clone(), vals.clone(), m).unwrap();
            for (i, p) in g.points().iter().enumerate() {
                prop_assert_eq!(it.evaluate(*p).unwrap()[0], vals.data()[i]);
            }
        }
    }

    #[test]
    fn periodic_shift_by_extent_is_identical(
        seed in 0u64..1000,
        qx in 0.0f64..1.0,
        qy in 0.0f64..1.0,
        m in 0usize..3,
    ) {
        let g = random_grid(seed, 40, Domain::unit_periodic());
        let vals = values_of(&g, |p| p[0] * p[0] - p[1]);
        let method = [InterpMethod::Linear, InterpMethod::Idw, InterpMethod::Knn(3)][m];
        let it = build_interpolant(g, vals, method).unwrap();
        let base = it.evaluate([qx, qy]).unwrap()[0];
        let shifted = it.evaluate([qx + 1.0, qy]).unwrap()[0];
        let tol = 1e-12;
        prop_assert!((base - shifted).abs() <= tol, "{} vs {}", base, shifted);
        let shifted = it.evaluate([qx, qy - 1.0]).unwrap()[0];
        prop_assert!((base - shifted).abs() <= tol);
    }

    #[test]
    fn weights_form_a_partition_of_unity(seed in 0u64..1000, qx in -0.5f64..1.5, qy in -0.5f64..1.5) {
        let g = random_grid(seed, 30, Domain::unit());
        let it = build_interpolant(g.clone(), values_of(&g, |_| 1.0), InterpMethod::Linear).unwrap();
        prop_assert!((it.evaluate([qx, qy]).unwrap()[0] - 1.0).abs() < 1e-12);
    }
}

/// Acute triangular lattice on the periodic unit square: every triangle is acute,
/// so midpoint refinement is again a Delaunay triangulation.
fn acute_lattice(seed: u64) -> SpatialGrid {
    let mut rng = rng_from_seed(seed);
    let mut pts = Vec::new();
    for j in 0..8 {
        for i in 0..8 {
            let x = (i as f64 + 0.5 * (j % 2) as f64) / 8.0;
            let y = j as f64 / 8.0;
            let jx = (rng.random::<f64>() - 0.5) * 0.008;
            let jy = (rng.random::<f64>() - 0.5) * 0.008;
            pts.push(Domain::unit_periodic().wrap([x + jx, y + jy]));
        }
    }
    SpatialGrid::new(pts, Domain::unit_periodic()).unwrap()
}

fn midpoint_refinement(geometry: &Interpolator) -> SpatialGrid {
    let d = *geometry.grid().domain();
    let mut pts = geometry.grid().points().to_vec();
    for (a, b) in geometry.edges() {
        let m = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        if m[0] < 0.0 || m[0] >= 1.0 || m[1] < 0.0 || m[1] >= 1.0 {
            continue;
        }
        if pts.iter().all(|p| d.dist2(*p, m) > 1e-18) {
            pts.push(m);
        }
    }
    SpatialGrid::new(pts, d).unwrap()
}

#[test]
fn refinement_consistency_on_acute_lattice() {
    let g = acute_lattice(3);
    let mut rng = rng_from_seed(5);
    let vals = Tensor::new(
        vec![g.len(), 2],
        (0..g.len() * 2).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
    )
    .unwrap();
    let coarse = build_interpolant(g.clone(), vals, InterpMethod::Linear).unwrap();
    let fine_grid = midpoint_refinement(coarse.geometry());
    assert_eq!(fine_grid.len(), 4 * g.len());
    let mut fine_vals = Vec::new();
    for p in fine_grid.points() {
        fine_vals.extend(coarse.evaluate(*p).unwrap());
    }
    let fine = build_interpolant(
        fine_grid.clone(),
        Tensor::new(vec![fine_grid.len(), 2], fine_vals).unwrap(),
        InterpMethod::Linear,
    )
    .unwrap();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p = [rng.random::<f64>(), rng.random::<f64>()];
        let a = coarse.evaluate(p).unwrap();
        let b = fine.evaluate(p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst <= 1e-9, "max deviation {worst:e}");
}

#[test]
fn neighbourhoods_follow_grid_translation() {
    let g = random_grid(11, 50, Domain::unit_periodic());
    let vals = values_of(&g, |p| (6.0 * p[0]).sin() + (4.0 * p[1]).cos());
    let s = Stencil::default_two_circle();
    let it = build_interpolant(g.clone(), vals.clone(), InterpMethod::Linear).unwrap();
    let moved = g.translated([0.37, -1.25]).unwrap();
    let it2 = build_interpolant(moved.clone(), vals, InterpMethod::Linear).unwrap();
    for (p, q) in g.points().iter().zip(moved.points()).take(10) {
        let a = eval_neighborhood(&it, *p, &s).unwrap();
        let b = eval_neighborhood(&it2, *q, &s).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
}
