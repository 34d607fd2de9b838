//! Polyline primitives: sampling, distances, discrepancies, simplification.
//!
//! Everything downstream (fusion, localization, completion, metrics) is built
//! on the operations in this module. All coordinates are meters in a local
//! planar frame, stored as `f64`.

mod grid;
mod simplify;

pub use grid::{PointIndex, SegmentIndex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum separation between consecutive polyline vertices.
pub const MIN_VERTEX_SEP: f64 = 1e-9;

#[derive(Error, Debug)]
pub enum GeomError {
    #[error("invalid polyline: {0}")]
    InvalidPolyline(String),
    #[error("empty input point set")]
    EmptyInput,
    #[error("class mismatch: {0:?} vs {1:?}")]
    ClassMismatch(SemanticClass, SemanticClass),
    #[error("degenerate segment: endpoints coincide")]
    DegenerateSegment,
}

/// A point in the local planar frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dist(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dist_sq(&self, other: &Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    /// Linear interpolation: `self + t * (other - self)`.
    pub fn lerp(&self, other: &Point2, t: f64) -> Point2 {
        Point2::new(self.x + t * (other.x - self.x), self.y + t * (other.y - self.y))
    }
}

/// Semantic class of a map element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SemanticClass {
    #[serde(rename = "ped_crossing")]
    PedCrossing,
    #[serde(rename = "divider")]
    LaneDivider,
    #[serde(rename = "boundary")]
    RoadBoundary,
}

impl SemanticClass {
    pub const ALL: [SemanticClass; 3] = [
        SemanticClass::PedCrossing,
        SemanticClass::LaneDivider,
        SemanticClass::RoadBoundary,
    ];

    pub fn index(self) -> usize {
        match self {
            SemanticClass::PedCrossing => 0,
            SemanticClass::LaneDivider => 1,
            SemanticClass::RoadBoundary => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SemanticClass::PedCrossing => "ped_crossing",
            SemanticClass::LaneDivider => "divider",
            SemanticClass::RoadBoundary => "boundary",
        }
    }

    pub fn parse(s: &str) -> Option<SemanticClass> {
        match s {
            "ped_crossing" => Some(SemanticClass::PedCrossing),
            "divider" => Some(SemanticClass::LaneDivider),
            "boundary" => Some(SemanticClass::RoadBoundary),
            _ => None,
        }
    }
}

/// Fixed-size container with one slot per [`SemanticClass`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMap<T> {
    pub ped_crossing: T,
    pub divider: T,
    pub boundary: T,
}

impl<T> ClassMap<T> {
    pub fn get(&self, class: SemanticClass) -> &T {
        match class {
            SemanticClass::PedCrossing => &self.ped_crossing,
            SemanticClass::LaneDivider => &self.divider,
            SemanticClass::RoadBoundary => &self.boundary,
        }
    }

    pub fn get_mut(&mut self, class: SemanticClass) -> &mut T {
        match class {
            SemanticClass::PedCrossing => &mut self.ped_crossing,
            SemanticClass::LaneDivider => &mut self.divider,
            SemanticClass::RoadBoundary => &mut self.boundary,
        }
    }

    pub fn from_fn(mut f: impl FnMut(SemanticClass) -> T) -> Self {
        ClassMap {
            ped_crossing: f(SemanticClass::PedCrossing),
            divider: f(SemanticClass::LaneDivider),
            boundary: f(SemanticClass::RoadBoundary),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (SemanticClass, &T)> {
        SemanticClass::ALL.iter().map(move |&c| (c, self.get(c)))
    }
}

impl<T> ClassMap<Vec<T>> {
    pub fn total_len(&self) -> usize {
        SemanticClass::ALL.iter().map(|&c| self.get(c).len()).sum()
    }
}

/// An ordered sequence of 2D vertices with a semantic class.
///
/// Invariants enforced at construction: at least two vertices, all
/// coordinates finite, consecutive vertices separated by more than
/// [`MIN_VERTEX_SEP`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    class_id: SemanticClass,
    vertices: Vec<Point2>,
}

impl Polyline {
    pub fn new(class_id: SemanticClass, vertices: Vec<Point2>) -> Result<Self, GeomError> {
        if vertices.len() < 2 {
            return Err(GeomError::InvalidPolyline(format!(
                "needs at least 2 vertices, got {}",
                vertices.len()
            )));
        }
        for (i, v) in vertices.iter().enumerate() {
            if !v.is_finite() {
                return Err(GeomError::InvalidPolyline(format!(
                    "non-finite coordinate at vertex {i}"
                )));
            }
        }
        for (i, w) in vertices.windows(2).enumerate() {
            if w[0].dist(&w[1]) <= MIN_VERTEX_SEP {
                return Err(GeomError::InvalidPolyline(format!(
                    "coincident consecutive vertices at {i}"
                )));
            }
        }
        Ok(Self { class_id, vertices })
    }

    /// Builds a polyline from raw points, dropping consecutive duplicates.
    /// Fails if fewer than two distinct vertices remain.
    pub fn dedup(class_id: SemanticClass, points: Vec<Point2>) -> Result<Self, GeomError> {
        let mut vertices: Vec<Point2> = Vec::with_capacity(points.len());
        for p in points {
            if vertices.last().map_or(true, |q: &Point2| q.dist(&p) > MIN_VERTEX_SEP) {
                vertices.push(p);
            }
        }
        Polyline::new(class_id, vertices)
    }

    pub fn class_id(&self) -> SemanticClass {
        self.class_id
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn first(&self) -> Point2 {
        self.vertices[0]
    }

    pub fn last(&self) -> Point2 {
        *self.vertices.last().unwrap()
    }

    pub fn reversed(&self) -> Polyline {
        let mut v = self.vertices.clone();
        v.reverse();
        Polyline { class_id: self.class_id, vertices: v }
    }

    /// Applies `f` to every vertex. The map must preserve the vertex-separation
    /// invariant (rigid transforms do).
    pub fn map_vertices(&self, f: impl Fn(Point2) -> Point2) -> Polyline {
        Polyline {
            class_id: self.class_id,
            vertices: self.vertices.iter().map(|&p| f(p)).collect(),
        }
    }

    /// Cumulative arc length at each vertex; `cum[0] == 0`.
    pub fn cumulative_lengths(&self) -> Vec<f64> {
        let mut cum = Vec::with_capacity(self.vertices.len());
        let mut s = 0.0;
        cum.push(0.0);
        for w in self.vertices.windows(2) {
            s += w[0].dist(&w[1]);
            cum.push(s);
        }
        cum
    }

    /// Point at arc-length position `s`, clamped to `[0, L]`.
    pub fn point_at(&self, s: f64) -> Point2 {
        let cum = self.cumulative_lengths();
        self.point_at_with(&cum, s)
    }

    /// Same as [`point_at`](Self::point_at) with precomputed cumulative lengths.
    pub fn point_at_with(&self, cum: &[f64], s: f64) -> Point2 {
        let total = *cum.last().unwrap();
        if s <= 0.0 {
            return self.vertices[0];
        }
        if s >= total {
            return *self.vertices.last().unwrap();
        }
        // Last index with cum[i] <= s.
        let i = match cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        if i + 1 >= self.vertices.len() {
            return *self.vertices.last().unwrap();
        }
        let seg_len = cum[i + 1] - cum[i];
        let t = if seg_len > 0.0 { (s - cum[i]) / seg_len } else { 0.0 };
        self.vertices[i].lerp(&self.vertices[i + 1], t)
    }

    /// Extracts the sub-polyline covering arc-length interval `[a, b]`,
    /// with interpolated endpoints. Returns `None` when the span is
    /// degenerate (shorter than [`MIN_VERTEX_SEP`] in arc length).
    pub fn sub_polyline(&self, a: f64, b: f64) -> Option<Polyline> {
        let cum = self.cumulative_lengths();
        let total = *cum.last().unwrap();
        let a = a.clamp(0.0, total);
        let b = b.clamp(0.0, total);
        if b - a <= MIN_VERTEX_SEP {
            return None;
        }
        let mut pts = vec![self.point_at_with(&cum, a)];
        for (i, &c) in cum.iter().enumerate() {
            if c > a && c < b {
                pts.push(self.vertices[i]);
            }
        }
        pts.push(self.point_at_with(&cum, b));
        Polyline::dedup(self.class_id, pts).ok()
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bbox(&self) -> (Point2, Point2) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
        }
        (lo, hi)
    }

    /// Outward unit tangent at one end, averaged over the trailing
    /// `min(1 m, L/2)` of arc length. Points away from the polyline body.
    pub fn outward_tangent(&self, at_start: bool) -> Point2 {
        let cum = self.cumulative_lengths();
        let total = *cum.last().unwrap();
        let h = (1.0_f64).min(total / 2.0).max(MIN_VERTEX_SEP);
        let (tip, inner) = if at_start {
            (self.vertices[0], self.point_at_with(&cum, h))
        } else {
            (*self.vertices.last().unwrap(), self.point_at_with(&cum, total - h))
        };
        let dx = tip.x - inner.x;
        let dy = tip.y - inner.y;
        let n = dx.hypot(dy);
        if n <= MIN_VERTEX_SEP {
            // Fall back to the terminal segment direction.
            let (p, q) = if at_start {
                (self.vertices[1], self.vertices[0])
            } else {
                (self.vertices[self.vertices.len() - 2], *self.vertices.last().unwrap())
            };
            let dx = q.x - p.x;
            let dy = q.y - p.y;
            let n = dx.hypot(dy);
            return Point2::new(dx / n, dy / n);
        }
        Point2::new(dx / n, dy / n)
    }
}

/// A directed line segment with the class of its parent polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment2 {
    pub a: Point2,
    pub b: Point2,
    pub class_id: SemanticClass,
}

impl Segment2 {
    pub fn new(a: Point2, b: Point2, class_id: SemanticClass) -> Result<Self, GeomError> {
        if a.dist(&b) <= MIN_VERTEX_SEP {
            return Err(GeomError::DegenerateSegment);
        }
        Ok(Self { a, b, class_id })
    }

    /// Closest point of the closed segment to `p`.
    pub fn closest_point(&self, p: &Point2) -> Point2 {
        let vx = self.b.x - self.a.x;
        let vy = self.b.y - self.a.y;
        let len_sq = vx * vx + vy * vy;
        let t = (((p.x - self.a.x) * vx + (p.y - self.a.y) * vy) / len_sq).clamp(0.0, 1.0);
        Point2::new(self.a.x + t * vx, self.a.y + t * vy)
    }
}

/// Total arc length: sum of Euclidean lengths of consecutive vertex pairs.
pub fn arc_length(poly: &Polyline) -> f64 {
    poly.vertices().windows(2).map(|w| w[0].dist(&w[1])).sum()
}

/// Arc-length sampling with step `step`: points at positions
/// `0, step, 2*step, ...` plus the final vertex exactly.
///
/// Original interior vertices are not included unless a sample lands on
/// them; every output point lies on the polyline.
pub fn resample(poly: &Polyline, step: f64) -> Vec<Point2> {
    assert!(step > 0.0, "resample step must be positive");
    let cum = poly.cumulative_lengths();
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity((total / step) as usize + 2);
    let mut k = 0u64;
    loop {
        let s = k as f64 * step;
        if s >= total - 1e-12 {
            break;
        }
        out.push(poly.point_at_with(&cum, s));
        k += 1;
    }
    out.push(*poly.vertices().last().unwrap());
    out
}

/// Subdivides every segment into pieces no longer than `step`, keeping all
/// original vertices. Used where downstream steps must not move corners.
pub fn densify(poly: &Polyline, step: f64) -> Vec<Point2> {
    assert!(step > 0.0, "densify step must be positive");
    let verts = poly.vertices();
    let mut out = Vec::with_capacity(verts.len() * 2);
    out.push(verts[0]);
    for w in verts.windows(2) {
        let len = w[0].dist(&w[1]);
        let n = (len / step).ceil().max(1.0) as usize;
        for i in 1..=n {
            out.push(w[0].lerp(&w[1], i as f64 / n as f64));
        }
    }
    out
}

/// Euclidean distance from `p` to the closed segment `s`.
pub fn point_to_segment_distance(p: &Point2, s: &Segment2) -> f64 {
    p.dist(&s.closest_point(p))
}

/// Distance between two axis-aligned bounding boxes (zero when they touch).
/// A lower bound on every point-to-point distance across the boxes, hence on
/// directed and symmetric discrepancies.
pub fn bbox_gap(a: (Point2, Point2), b: (Point2, Point2)) -> f64 {
    let dx = (b.0.x - a.1.x).max(a.0.x - b.1.x).max(0.0);
    let dy = (b.0.y - a.1.y).max(a.0.y - b.1.y).max(0.0);
    dx.hypot(dy)
}

/// Mean over `src` of the nearest-neighbor Euclidean distance into `dst`.
///
/// Uses a uniform-grid index internally; the result is exactly the
/// brute-force nearest-neighbor mean.
pub fn directed_distance(src: &[Point2], dst: &[Point2]) -> Result<f64, GeomError> {
    if src.is_empty() || dst.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    let index = PointIndex::build(dst, 0.5);
    let sum: f64 = src.iter().map(|p| index.nearest(p).1).sum();
    Ok(sum / src.len() as f64)
}

/// Symmetric discrepancy between two same-class polylines:
/// `0.5 * (directed(Sa -> Sb) + directed(Sb -> Sa))` with both sides
/// sampled at `step`.
pub fn symmetric_discrepancy(a: &Polyline, b: &Polyline, step: f64) -> Result<f64, GeomError> {
    if a.class_id() != b.class_id() {
        return Err(GeomError::ClassMismatch(a.class_id(), b.class_id()));
    }
    let sa = resample(a, step);
    let sb = resample(b, step);
    let cell = step.max(0.5);
    let ia = PointIndex::build(&sa, cell);
    let ib = PointIndex::build(&sb, cell);
    let fwd: f64 = sa.iter().map(|p| ib.nearest(p).1).sum::<f64>() / sa.len() as f64;
    let bwd: f64 = sb.iter().map(|p| ia.nearest(p).1).sum::<f64>() / sb.len() as f64;
    Ok(0.5 * (fwd + bwd))
}

/// Douglas-Peucker simplification. Endpoints are preserved exactly and every
/// removed vertex stays within `tolerance` of the output.
pub fn simplify(poly: &Polyline, tolerance: f64) -> Polyline {
    assert!(tolerance >= 0.0, "tolerance must be non-negative");
    let kept = simplify::douglas_peucker(poly.vertices(), tolerance);
    Polyline::new(poly.class_id(), kept).expect("simplification preserves endpoints")
}
