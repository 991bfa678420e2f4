use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use spade::handles::FixedVertexHandle;
use spade::{DelaunayTriangulation, HasPosition, Point2, PositionInTriangulation, Triangulation};

use super::grid::{Point, SpatialGrid};
use crate::error::{contract, Error, Result};
use crate::numcore::Tensor;

/// Interpolation backend.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterpMethod {
    /// Barycentric interpolation on a Delaunay triangulation.
    Linear,
    /// Mean of the `k` nearest node values.
    Knn(usize),
    /// Inverse squared distance weighting.
    Idw,
}

impl Default for InterpMethod {
    fn default() -> Self {
        InterpMethod::Linear
    }
}

impl fmt::Display for InterpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InterpMethod::Linear => write!(f, "linear"),
            InterpMethod::Knn(k) => write!(f, "knn:{k}"),
            InterpMethod::Idw => write!(f, "idw"),
        }
    }
}

impl FromStr for InterpMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(InterpMethod::Linear),
            "idw" => Ok(InterpMethod::Idw),
            "knn" => Ok(InterpMethod::Knn(3)),
            _ => match s.strip_prefix("knn:").map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 1 => Ok(InterpMethod::Knn(k)),
                _ => Err(Error::Contract(format!("unknown interpolation method '{s}'"))),
            },
        }
    }
}

/// Weights of one query: a linear combination of node values, or a fixed constant.
#[derive(Clone, Debug, PartialEq)]
pub enum QueryWeights {
    Nodes(Vec<(usize, f64)>),
    Constant(f64),
}

#[derive(Clone, Copy, Debug)]
struct Site {
    pos: Point2<f64>,
    id: usize,
}

impl HasPosition for Site {
    type Scalar = f64;

    fn position(&self) -> Point2<f64> {
        self.pos
    }
}

const IDW_EPS: f64 = 1e-12;

/// Geometry half of an interpolant: maps a query point to node weights.
///
/// Building it once per grid lets every field on that grid reuse the same
/// triangulation; since all three methods are linear in the node values,
/// evaluation is a sparse weighted sum.
pub struct Interpolator {
    grid: SpatialGrid,
    method: InterpMethod,
    tri: Option<DelaunayTriangulation<Site>>,
}

impl fmt::Debug for Interpolator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Interpolator")
            .field("n", &self.grid.len())
            .field("method", &self.method)
            .finish()
    }
}

impl Interpolator {
    pub fn new(grid: SpatialGrid, method: InterpMethod) -> Result<Self> {
        if let InterpMethod::Knn(k) = method {
            contract!(k >= 1, "knn needs k >= 1");
        }
        let tri = match method {
            InterpMethod::Linear if grid.len() >= 3 => Some(triangulate(&grid)?),
            _ => None,
        };
        Ok(Self { grid, method, tri })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn method(&self) -> InterpMethod {
        self.method
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Maps `p` into the region where node weights are computed: periodic axes are
    /// wrapped; on other axes an out-of-domain point either yields the sentinel or
    /// is clamped onto the domain boundary.
    fn canonical(&self, p: Point) -> std::result::Result<Point, f64> {
        let d = self.grid.domain();
        let mut q = p;
        for a in 0..2 {
            if d.periodic[a] {
                if !(q[a] >= d.lo[a] && q[a] < d.hi[a]) {
                    q[a] = d.wrap(q)[a];
                }
            } else if q[a] < d.lo[a] || q[a] > d.hi[a] {
                if let Some(s) = self.grid.sentinel() {
                    return Err(s);
                }
                q[a] = q[a].clamp(d.lo[a], d.hi[a]);
            }
        }
        Ok(q)
    }

    pub fn weights(&self, p: Point) -> Result<QueryWeights> {
        contract!(p[0].is_finite() && p[1].is_finite(), "non-finite query point {p:?}");
        let q = match self.canonical(p) {
            Ok(q) => q,
            Err(s) => return Ok(QueryWeights::Constant(s)),
        };
        let w = match self.method {
            InterpMethod::Linear => self.linear_weights(q),
            InterpMethod::Knn(k) => self.knn_weights(q, k),
            InterpMethod::Idw => self.idw_weights(q),
        };
        Ok(QueryWeights::Nodes(w))
    }

    fn nearest(&self, q: Point) -> usize {
        let d = self.grid.domain();
        let mut best = (f64::INFINITY, 0);
        for (i, x) in self.grid.points().iter().enumerate() {
            let r = d.dist2(q, *x);
            if r < best.0 {
                best = (r, i);
            }
        }
        best.1
    }

    fn linear_weights(&self, q: Point) -> Vec<(usize, f64)> {
        let Some(tri) = &self.tri else {
            return vec![(self.nearest(q), 1.0)];
        };
        let id = |h: FixedVertexHandle| tri.vertex(h).data().id;
        match tri.locate(Point2::new(q[0], q[1])) {
            PositionInTriangulation::OnVertex(h) => vec![(id(h), 1.0)],
            PositionInTriangulation::OnEdge(e) => {
                let [a, b] = tri.directed_edge(e).vertices();
                let (pa, pb) = (a.position(), b.position());
                let (dx, dy) = (pb.x - pa.x, pb.y - pa.y);
                let s = ((q[0] - pa.x) * dx + (q[1] - pa.y) * dy) / (dx * dx + dy * dy);
                merge(vec![(id(a.fix()), 1.0 - s), (id(b.fix()), s)])
            }
            PositionInTriangulation::OnFace(f) => {
                let vs = tri.face(f).vertices();
                let p: Vec<Point2<f64>> = vs.iter().map(|v| v.position()).collect();
                let det = (p[1].y - p[2].y) * (p[0].x - p[2].x) + (p[2].x - p[1].x) * (p[0].y - p[2].y);
                let l0 = ((p[1].y - p[2].y) * (q[0] - p[2].x) + (p[2].x - p[1].x) * (q[1] - p[2].y)) / det;
                let l1 = ((p[2].y - p[0].y) * (q[0] - p[2].x) + (p[0].x - p[2].x) * (q[1] - p[2].y)) / det;
                let l2 = 1.0 - l0 - l1;
                merge(vec![
                    (id(vs[0].fix()), l0),
                    (id(vs[1].fix()), l1),
                    (id(vs[2].fix()), l2),
                ])
            }
            PositionInTriangulation::OutsideOfConvexHull(_) | PositionInTriangulation::NoTriangulation => {
                vec![(self.nearest(q), 1.0)]
            }
        }
    }

    fn knn_weights(&self, q: Point, k: usize) -> Vec<(usize, f64)> {
        let d = self.grid.domain();
        let mut ranked: Vec<(f64, usize)> = self
            .grid
            .points()
            .iter()
            .enumerate()
            .map(|(i, x)| (d.dist2(q, *x), i))
            .collect();
        let k = k.min(ranked.len());
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < ranked.len() {
            ranked.select_nth_unstable_by(k - 1, cmp);
        }
        ranked.truncate(k);
        ranked.sort_by(cmp);
        let w = 1.0 / k as f64;
        ranked.into_iter().map(|(_, i)| (i, w)).collect()
    }

    fn idw_weights(&self, q: Point) -> Vec<(usize, f64)> {
        let d = self.grid.domain();
        let d2: Vec<f64> = self.grid.points().iter().map(|x| d.dist2(q, *x)).collect();
        if let Some(i) = d2.iter().position(|&r| r.sqrt() < IDW_EPS) {
            return vec![(i, 1.0)];
        }
        let raw: Vec<f64> = d2.iter().map(|r| 1.0 / (r + IDW_EPS)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().enumerate().map(|(i, w)| (i, w / total)).collect()
    }

    /// Whether `p` (after periodic wrapping) lies inside the triangulated hull.
    /// Always true for the non-linear methods.
    pub fn inside_hull(&self, p: Point) -> bool {
        let Some(tri) = &self.tri else {
            return !matches!(self.method, InterpMethod::Linear);
        };
        let q = self.grid.domain().wrap(p);
        !matches!(
            tri.locate(Point2::new(q[0], q[1])),
            PositionInTriangulation::OutsideOfConvexHull(_) | PositionInTriangulation::NoTriangulation
        )
    }

    /// Endpoints of every triangulation edge, in triangulation coordinates
    /// (periodic copies included).
    pub fn edges(&self) -> Vec<(Point, Point)> {
        let Some(tri) = &self.tri else {
            return Vec::new();
        };
        tri.undirected_edges()
            .map(|e| {
                let [a, b] = e.vertices();
                let (pa, pb) = (a.position(), b.position());
                ([pa.x, pa.y], [pb.x, pb.y])
            })
            .collect()
    }

    /// Evaluates the field `values` (N × c) at `p`.
    pub fn evaluate(&self, values: &Tensor, p: Point) -> Result<Vec<f64>> {
        let c = check_values(values, self.len())?;
        Ok(match self.weights(p)? {
            QueryWeights::Constant(s) => vec![s; c],
            QueryWeights::Nodes(w) => {
                let mut out = vec![0.0; c];
                for (i, wi) in w {
                    let row = &values.data()[i * c..(i + 1) * c];
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += wi * v;
                    }
                }
                out
            }
        })
    }
}

fn merge(mut w: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    w.sort_by_key(|x| x.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(w.len());
    for (i, v) in w {
        match out.last_mut() {
            Some(last) if last.0 == i => last.1 += v,
            _ => out.push((i, v)),
        }
    }
    out
}

fn check_values(values: &Tensor, n: usize) -> Result<usize> {
    contract!(
        values.shape().len() == 2 && values.rows() == n,
        "values must be {n} x c, got {:?}",
        values.shape()
    );
    Ok(values.cols())
}

fn triangulate(grid: &SpatialGrid) -> Result<DelaunayTriangulation<Site>> {
    let d = grid.domain();
    let n = grid.len();
    let frac = (3.0 / (n as f64).sqrt()).clamp(0.25, 1.0);
    let margin = [d.extent(0) * frac, d.extent(1) * frac];
    let shifts = |a: usize| -> Vec<f64> {
        if d.periodic[a] {
            vec![0.0, -d.extent(a), d.extent(a)]
        } else {
            vec![0.0]
        }
    };
    let mut sites = Vec::with_capacity(n * 4);
    for sx in shifts(0) {
        for sy in shifts(1) {
            for (id, p) in grid.points().iter().enumerate() {
                let q = [p[0] + sx, p[1] + sy];
                let keep = (0..2).all(|a| q[a] >= d.lo[a] - margin[a] && q[a] <= d.hi[a] + margin[a]);
                if keep {
                    sites.push(Site {
                        pos: Point2::new(q[0], q[1]),
                        id,
                    });
                }
            }
        }
    }
    let tri = DelaunayTriangulation::<Site>::bulk_load_stable(sites)
        .map_err(|e| Error::Geometry(format!("triangulation failed: {e:?}")))?;
    if tri.num_inner_faces() == 0 {
        return Err(Error::Geometry(
            "grid points are collinear; no triangles to interpolate on".into(),
        ));
    }
    Ok(tri)
}

/// An interpolator bound to one field of node values.
#[derive(Clone, Debug)]
pub struct Interpolant {
    geometry: Arc<Interpolator>,
    values: Tensor,
}

impl Interpolant {
    pub fn new(geometry: Arc<Interpolator>, values: Tensor) -> Result<Self> {
        check_values(&values, geometry.len())?;
        contract!(values.is_finite(), "interpolant values contain NaN or infinity");
        Ok(Self { geometry, values })
    }

    pub fn geometry(&self) -> &Arc<Interpolator> {
        &self.geometry
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    pub fn evaluate(&self, p: Point) -> Result<Vec<f64>> {
        self.geometry.evaluate(&self.values, p)
    }
}

/// Builds the geometry and binds `values` (N × c) in one go.
pub fn build_interpolant(grid: SpatialGrid, values: Tensor, method: InterpMethod) -> Result<Interpolant> {
    let geometry = Arc::new(Interpolator::new(grid, method)?);
    Interpolant::new(geometry, values)
}
