//! Irregular-grid geometry: domains, interpolation, stencils and neighbourhoods.

mod grid;
mod interp;
mod neighborhood;
mod stencil;

pub use grid::{Domain, Point, SpatialGrid, DUPLICATE_TOL};
pub use interp::{build_interpolant, InterpMethod, Interpolant, Interpolator, QueryWeights};
pub use neighborhood::{eval_neighborhood, neighborhood_operator, node_neighborhood_operator};
pub use stencil::{make_stencil, Stencil};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    fn affine(p: Point) -> f64 {
        3.0 * p[0] + 2.0 * p[1] + 1.0
    }

    fn scattered() -> SpatialGrid {
        let mut pts = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let mut s = 0.123_f64;
        for _ in 0..40 {
            s = (s * 9301.0 + 0.4927).fract();
            let x = s;
            s = (s * 9301.0 + 0.4927).fract();
            pts.push([x, s]);
        }
        SpatialGrid::new(pts, Domain::unit()).unwrap()
    }

    fn field(grid: &SpatialGrid, f: impl Fn(Point) -> f64) -> Tensor {
        Tensor::new(vec![grid.len(), 1], grid.points().iter().map(|p| f(*p)).collect()).unwrap()
    }

    #[test]
    fn linear_reproduces_affine_fields() {
        let g = scattered();
        let it = build_interpolant(g.clone(), field(&g, affine), InterpMethod::Linear).unwrap();
        for p in [[0.5, 0.5], [0.13, 0.91], [0.999, 0.001], [0.3333, 0.25]] {
            let v = it.evaluate(p).unwrap()[0];
            assert!((v - affine(p)).abs() <= 1e-12 * affine(p).abs(), "{p:?}: {v}");
        }
    }

    #[test]
    fn node_queries_are_exact_for_linear_and_idw() {
        let g = scattered();
        let vals = field(&g, |p| (7.0 * p[0]).sin() + p[1].powi(3));
        for m in [InterpMethod::Linear, InterpMethod::Idw, InterpMethod::Knn(1)] {
            let it = build_interpolant(g.clone(), vals.clone(), m).unwrap();
            for (i, p) in g.points().iter().enumerate() {
                assert_eq!(it.evaluate(*p).unwrap()[0], vals.data()[i], "{m} node {i}");
            }
        }
    }

    #[test]
    fn idw_midpoint_between_two_close_nodes() {
        let pts = vec![[0.45, 0.5], [0.55, 0.5], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let g = SpatialGrid::new(pts, Domain::unit()).unwrap();
        let vals = Tensor::new(vec![5, 1], vec![0.0, 1.0, 0.5, 0.5, 0.5]).unwrap();
        let it = build_interpolant(g, vals, InterpMethod::Idw).unwrap();
        let v = it.evaluate([0.5, 0.5]).unwrap()[0];
        // far nodes carry a few percent of the weight and all have value 0.5
        assert!((v - 0.5).abs() < 1e-12, "{v}");
        let vals = Tensor::new(vec![5, 1], vec![0.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let it = build_interpolant(it.geometry().grid().clone(), vals, InterpMethod::Idw).unwrap();
        let v = it.evaluate([0.5, 0.5]).unwrap()[0];
        let near = 1.0 / (0.0025 + 1e-12);
        let far = 2.0 / (0.5 + 1e-12) + 1.0 / (0.25 + 1e-12 + 0.25);
        assert!((v - near / (2.0 * near + far)).abs() < 1e-12);
        assert!((v - 0.5).abs() < 0.01);
    }

    #[test]
    fn knn_mean_with_index_tie_break() {
        let pts = vec![[0.25, 0.5], [0.75, 0.5], [0.5, 0.25], [0.5, 0.75], [0.875, 0.875]];
        let g = SpatialGrid::new(pts, Domain::unit()).unwrap();
        let vals = Tensor::new(vec![5, 1], vec![1.0, 2.0, 4.0, 8.0, 16.0]).unwrap();
        let it = build_interpolant(g, vals, InterpMethod::Knn(3)).unwrap();
        // four nodes tie at the centre; the three lowest indices win
        assert!((it.evaluate([0.5, 0.5]).unwrap()[0] - 7.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_field_neighbourhood() {
        let g = scattered();
        let it = build_interpolant(g.clone(), field(&g, |_| 7.0), InterpMethod::Linear).unwrap();
        let s = make_stencil(0.1, 2, 8).unwrap();
        let n = eval_neighborhood(&it, [0.4, 0.6], &s).unwrap();
        assert_eq!(n.shape(), &[17, 1]);
        assert!(n.data().iter().all(|v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn affine_neighbourhood_rows() {
        let g = scattered();
        let it = build_interpolant(g.clone(), field(&g, affine), InterpMethod::Linear).unwrap();
        let s = make_stencil(0.1, 2, 8).unwrap();
        let x = [0.42, 0.37];
        let n = eval_neighborhood(&it, x, &s).unwrap();
        for (k, o) in s.offsets().iter().enumerate() {
            let want = affine([x[0] + o[0], x[1] + o[1]]);
            assert!((n.data()[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn periodic_wrap_matches_explicit_query() {
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                let jitter = 0.03 * ((i * 7 + j * 3) % 5) as f64 / 5.0;
                pts.push([i as f64 / 6.0 + jitter, j as f64 / 6.0 + 0.5 * jitter]);
            }
        }
        let g = SpatialGrid::new(pts, Domain::unit_periodic()).unwrap();
        let vals = field(&g, |p| (2.0 * std::f64::consts::PI * p[0]).sin() + p[1]);
        let it = build_interpolant(g, vals, InterpMethod::Linear).unwrap();
        let s = Stencil::new(0.05, 1, 1).unwrap();
        let n = eval_neighborhood(&it, [0.99, 0.5], &s).unwrap();
        let direct = it.evaluate([0.04, 0.5]).unwrap()[0];
        assert!((n.data()[1] - direct).abs() < 1e-15);
        assert_eq!(it.evaluate([0.3, 0.7]).unwrap(), it.evaluate([1.3, -0.3]).unwrap());
    }

    #[test]
    fn non_periodic_sentinel_and_clamp() {
        let g = scattered();
        let it = build_interpolant(g.clone(), field(&g, affine), InterpMethod::Linear).unwrap();
        let v = it.evaluate([1.2, 0.5]).unwrap()[0];
        assert!((v - affine([1.0, 0.5])).abs() < 1e-12);
        let gs = g.with_sentinel(-1.0);
        let it = build_interpolant(gs.clone(), field(&gs, affine), InterpMethod::Linear).unwrap();
        assert_eq!(it.evaluate([1.2, 0.5]).unwrap(), vec![-1.0]);
        assert_eq!(it.evaluate([0.5, -0.01]).unwrap(), vec![-1.0]);
    }

    #[test]
    fn degenerate_geometry() {
        let line = SpatialGrid::new(vec![[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]], Domain::unit()).unwrap();
        let vals = Tensor::zeros(&[3, 1]);
        let err = build_interpolant(line.clone(), vals.clone(), InterpMethod::Linear).unwrap_err();
        assert!(matches!(err, crate::Error::Geometry(_)));
        assert!(build_interpolant(line, vals, InterpMethod::Idw).is_ok());

        let one = SpatialGrid::new(vec![[0.5, 0.5]], Domain::unit_periodic()).unwrap();
        let it = build_interpolant(
            one,
            Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap(),
            InterpMethod::Linear,
        )
        .unwrap();
        assert_eq!(it.evaluate([0.1, 0.9]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn nan_values_are_rejected() {
        let g = scattered();
        let mut vals = field(&g, affine);
        vals.data_mut()[3] = f64::NAN;
        let err = build_interpolant(g, vals, InterpMethod::Linear).unwrap_err();
        assert!(matches!(err, crate::Error::Contract(_)));
    }

    #[test]
    fn operator_matches_pointwise_evaluation() {
        let g = scattered();
        let vals = field(&g, |p| (3.0 * p[0]).cos() * p[1]);
        let it = build_interpolant(g.clone(), vals.clone(), InterpMethod::Linear).unwrap();
        let s = Stencil::default_two_circle();
        let op = node_neighborhood_operator(it.geometry(), &s).unwrap();
        let out = op.apply(vals.data(), 1);
        for (j, x) in g.points().iter().enumerate().step_by(7) {
            let n = eval_neighborhood(&it, *x, &s).unwrap();
            for k in 0..s.len() {
                assert!((out[j * s.len() + k] - n.data()[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn method_parsing() {
        for m in [InterpMethod::Linear, InterpMethod::Idw, InterpMethod::Knn(5)] {
            assert_eq!(m.to_string().parse::<InterpMethod>().unwrap(), m);
        }
        assert_eq!("knn".parse::<InterpMethod>().unwrap(), InterpMethod::Knn(3));
        assert!("cubic".parse::<InterpMethod>().is_err());
    }
}
