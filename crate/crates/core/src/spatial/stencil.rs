use super::grid::Point;
use crate::error::{contract, Result};

/// Fixed neighbourhood pattern: the centre followed by points on concentric circles.
#[derive(Clone, Debug, PartialEq)]
pub struct Stencil {
    offsets: Vec<Point>,
    pub n_circles: usize,
    pub points_per_circle: usize,
    pub radius: f64,
}

impl Stencil {
    /// Centre first, then circle `k = 1..=n_circles` at radius `radius * k / n_circles`,
    /// each with `points_per_circle` points at equal angles starting from angle 0.
    pub fn new(radius: f64, n_circles: usize, points_per_circle: usize) -> Result<Self> {
        contract!(radius > 0.0 && radius.is_finite(), "stencil radius must be positive");
        contract!(points_per_circle >= 1, "need at least one point per circle");
        let mut offsets = vec![[0.0, 0.0]];
        for k in 1..=n_circles {
            let rk = radius * k as f64 / n_circles as f64;
            for p in 0..points_per_circle {
                let a = 2.0 * std::f64::consts::PI * p as f64 / points_per_circle as f64;
                offsets.push([rk * a.cos(), rk * a.sin()]);
            }
        }
        Ok(Self {
            offsets,
            n_circles,
            points_per_circle,
            radius,
        })
    }

    /// Two circles of eight points at radii `r/2` and `r`, `r = 0.1`.
    pub fn default_two_circle() -> Self {
        Self::new(0.1, 2, 8).expect("valid default stencil")
    }

    pub fn offsets(&self) -> &[Point] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Same as [`Stencil::new`].
pub fn make_stencil(radius: f64, n_circles: usize, points_per_circle: usize) -> Result<Stencil> {
    Stencil::new(radius, n_circles, points_per_circle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radius(p: Point) -> f64 {
        (p[0] * p[0] + p[1] * p[1]).sqrt()
    }

    #[test]
    fn default_has_seventeen_offsets_on_two_rings() {
        let s = make_stencil(0.1, 2, 8).unwrap();
        assert_eq!(s.len(), 17);
        assert_eq!(s.offsets()[0], [0.0, 0.0]);
        for p in &s.offsets()[1..9] {
            assert!((radius(*p) - 0.05).abs() < 1e-15);
        }
        for p in &s.offsets()[9..] {
            assert!((radius(*p) - 0.1).abs() < 1e-15);
        }
        // first point of each ring sits at angle 0
        assert_eq!(s.offsets()[1], [0.05, 0.0]);
        assert_eq!(s.offsets()[9], [0.1, 0.0]);
    }

    #[test]
    fn no_circles_is_just_the_centre() {
        let s = make_stencil(0.3, 0, 8).unwrap();
        assert_eq!(s.offsets(), &[[0.0, 0.0]]);
    }

    #[test]
    fn three_circles() {
        let s = make_stencil(0.2, 3, 8).unwrap();
        assert_eq!(s.len(), 25);
        let radii: Vec<f64> = [1, 9, 17].iter().map(|&i| radius(s.offsets()[i])).collect();
        for (r, want) in radii.iter().zip([0.2 / 3.0, 0.4 / 3.0, 0.2]) {
            assert!((r - want).abs() < 1e-15);
        }
        assert!((radii[0] - 0.0667).abs() < 1e-4 && (radii[1] - 0.1333).abs() < 1e-4);
    }

    #[test]
    fn invalid_parameters() {
        assert!(make_stencil(0.0, 2, 8).is_err());
        assert!(make_stencil(0.1, 2, 0).is_err());
    }
}
