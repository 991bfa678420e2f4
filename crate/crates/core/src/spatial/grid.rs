use crate::error::{contract, Result};

pub type Point = [f64; 2];

/// Axis-aligned rectangle with optional periodicity per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub lo: Point,
    pub hi: Point,
    pub periodic: [bool; 2],
}

impl Domain {
    pub fn unit_periodic() -> Self {
        Self {
            lo: [0.0, 0.0],
            hi: [1.0, 1.0],
            periodic: [true, true],
        }
    }

    pub fn unit() -> Self {
        Self {
            lo: [0.0, 0.0],
            hi: [1.0, 1.0],
            periodic: [false, false],
        }
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn contains(&self, p: Point) -> bool {
        (0..2).all(|a| p[a] >= self.lo[a] && p[a] <= self.hi[a])
    }

    /// Wraps periodic coordinates into `[lo, hi)`; other axes are left alone.
    pub fn wrap(&self, p: Point) -> Point {
        let mut q = p;
        for a in 0..2 {
            if self.periodic[a] {
                let e = self.extent(a);
                let mut r = (p[a] - self.lo[a]).rem_euclid(e);
                if r >= e {
                    r = 0.0;
                }
                q[a] = self.lo[a] + r;
            }
        }
        q
    }

    /// Squared distance using the minimum image on periodic axes.
    pub fn dist2(&self, a: Point, b: Point) -> f64 {
        let mut s = 0.0;
        for ax in 0..2 {
            let mut d = (a[ax] - b[ax]).abs();
            if self.periodic[ax] {
                let e = self.extent(ax);
                d = d.rem_euclid(e);
                d = d.min(e - d);
            }
            s += d * d;
        }
        s
    }

    /// Same domain moved by `delta`.
    pub fn translated(&self, delta: Point) -> Self {
        Self {
            lo: [self.lo[0] + delta[0], self.lo[1] + delta[1]],
            hi: [self.hi[0] + delta[0], self.hi[1] + delta[1]],
            periodic: self.periodic,
        }
    }
}

/// Observation locations on a 2-D domain.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialGrid {
    points: Vec<Point>,
    domain: Domain,
    sentinel: Option<f64>,
}

pub const DUPLICATE_TOL: f64 = 1e-12;

impl SpatialGrid {
    pub fn new(points: Vec<Point>, domain: Domain) -> Result<Self> {
        contract!(!points.is_empty(), "spatial grid needs at least one point");
        for a in 0..2 {
            contract!(domain.hi[a] > domain.lo[a], "domain axis {a} has empty extent");
        }
        for (i, p) in points.iter().enumerate() {
            contract!(
                p[0].is_finite() && p[1].is_finite() && domain.contains(*p),
                "point {i} = {p:?} lies outside the domain"
            );
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]));
        for (k, &i) in order.iter().enumerate() {
            for &j in &order[k + 1..] {
                if points[j][0] - points[i][0] > DUPLICATE_TOL {
                    break;
                }
                contract!(
                    domain.dist2(points[i], points[j]).sqrt() > DUPLICATE_TOL,
                    "points {i} and {j} coincide"
                );
            }
        }
        Ok(Self {
            points,
            domain,
            sentinel: None,
        })
    }

    /// Out-of-domain stencil queries on non-periodic axes return `value`.
    pub fn with_sentinel(mut self, value: f64) -> Self {
        self.sentinel = Some(value);
        self
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn sentinel(&self) -> Option<f64> {
        self.sentinel
    }

    /// Grid and domain moved by `delta`.
    pub fn translated(&self, delta: Point) -> Result<Self> {
        let pts = self.points.iter().map(|p| [p[0] + delta[0], p[1] + delta[1]]).collect();
        let mut g = Self::new(pts, self.domain.translated(delta))?;
        g.sentinel = self.sentinel;
        Ok(g)
    }

    /// Sub-grid with the given node indices, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let pts = idx.iter().map(|&i| self.points[i]).collect();
        let mut g = Self::new(pts, self.domain)?;
        g.sentinel = self.sentinel;
        Ok(g)
    }
}
