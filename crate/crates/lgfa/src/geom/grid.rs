//! Uniform-grid spatial indexes for exact nearest-neighbor queries.
//!
//! Correctness is defined by the brute-force oracle: ring expansion continues
//! until no unvisited ring can contain a closer item, and queries that do not
//! close within a few rings fall back to a full linear scan. Results
//! (including index-based tie-breaking) match an exhaustive scan exactly.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use super::{Point2, Segment2};

/// Multiply-xor hasher for cell coordinates; nearest-neighbor queries hash
/// a handful of cells each, so hashing must be cheap.
#[derive(Default)]
pub struct CellHasher(u64);

impl Hasher for CellHasher {
    fn finish(&self) -> u64 {
        self.0
    }
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x100000001B3);
        }
    }
    fn write_i64(&mut self, v: i64) {
        self.0 = (self.0.rotate_left(31) ^ v as u64).wrapping_mul(0x9E3779B97F4A7C15);
    }
}

type CellMap<V> = HashMap<(i64, i64), V, BuildHasherDefault<CellHasher>>;

fn cell_of(p: &Point2, cell: f64) -> (i64, i64) {
    ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
}

/// Any item registered in a cell of Chebyshev ring `r > 0` around the query
/// cell lies at Euclidean distance greater than `(r - 1) * cell`.
fn ring_closed(ring: i64, cell: f64, best: f64) -> bool {
    best.is_finite() && ring > 0 && (ring - 1) as f64 * cell > best
}

/// Ring budget before a query falls back to the linear scan. Near queries
/// (the common case) close within a ring or two.
const MAX_RINGS: i64 = 4;

/// Rebuild-friendly grid index over points: a flat compressed-row layout
/// across the point bounding box. Nearest queries return `(index, distance)`
/// with ties broken toward the lower index, identical to a linear scan.
#[derive(Debug)]
pub struct PointIndex {
    cell: f64,
    min_cx: i64,
    min_cy: i64,
    nx: i64,
    ny: i64,
    starts: Vec<u32>,
    items: Vec<u32>,
    points: Vec<Point2>,
}

/// Flat cell-array budget; wider point spreads coarsen the cell size instead
/// of growing the array (the termination bound uses the actual cell size, so
/// exactness is unaffected).
const MAX_FLAT_CELLS: i64 = 1 << 21;

impl PointIndex {
    pub fn build(points: &[Point2], cell: f64) -> Self {
        assert!(cell > 0.0);
        let mut cell = cell;
        let (min_cx, min_cy, nx, ny) = loop {
            if points.is_empty() {
                break (0, 0, 1, 1);
            }
            let mut lo = points[0];
            let mut hi = points[0];
            for p in points {
                lo.x = lo.x.min(p.x);
                lo.y = lo.y.min(p.y);
                hi.x = hi.x.max(p.x);
                hi.y = hi.y.max(p.y);
            }
            let min_cx = (lo.x / cell).floor() as i64;
            let min_cy = (lo.y / cell).floor() as i64;
            let nx = (hi.x / cell).floor() as i64 - min_cx + 1;
            let ny = (hi.y / cell).floor() as i64 - min_cy + 1;
            if nx.saturating_mul(ny) <= MAX_FLAT_CELLS {
                break (min_cx, min_cy, nx, ny);
            }
            cell *= 2.0;
        };

        let ncells = (nx * ny) as usize;
        let mut counts = vec![0u32; ncells + 1];
        let cell_id = |p: &Point2| -> usize {
            let cx = (p.x / cell).floor() as i64 - min_cx;
            let cy = (p.y / cell).floor() as i64 - min_cy;
            (cy * nx + cx) as usize
        };
        for p in points {
            counts[cell_id(p) + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut items = vec![0u32; points.len()];
        for (i, p) in points.iter().enumerate() {
            let c = cell_id(p);
            items[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        Self { cell, min_cx, min_cy, nx, ny, starts, items, points: points.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Point2 {
        self.points[i]
    }

    #[inline]
    fn cell_items(&self, cx: i64, cy: i64) -> &[u32] {
        if cx < self.min_cx
            || cy < self.min_cy
            || cx >= self.min_cx + self.nx
            || cy >= self.min_cy + self.ny
        {
            return &[];
        }
        let c = ((cy - self.min_cy) * self.nx + (cx - self.min_cx)) as usize;
        &self.items[self.starts[c] as usize..self.starts[c + 1] as usize]
    }

    fn linear_scan(&self, q: &Point2) -> (usize, f64) {
        let mut best_idx = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = q.dist(p);
            if d < best_d {
                best_d = d;
                best_idx = i;
            }
        }
        (best_idx, best_d)
    }

    /// Exact nearest neighbor of `q`. Panics on an empty index.
    pub fn nearest(&self, q: &Point2) -> (usize, f64) {
        assert!(!self.points.is_empty(), "nearest() on empty index");
        let (cx, cy) = cell_of(q, self.cell);
        let mut best_idx = usize::MAX;
        let mut best_d = f64::INFINITY;
        let mut ring = 0i64;
        while !ring_closed(ring, self.cell, best_d) {
            if ring > MAX_RINGS {
                return self.linear_scan(q);
            }
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    if dx.abs().max(dy.abs()) != ring {
                        continue;
                    }
                    for &i in self.cell_items(cx + dx, cy + dy) {
                        let d = q.dist(&self.points[i as usize]);
                        if d < best_d || (d == best_d && (i as usize) < best_idx) {
                            best_d = d;
                            best_idx = i as usize;
                        }
                    }
                }
            }
            ring += 1;
        }
        (best_idx, best_d)
    }

    /// Whether any indexed point lies within `radius` of `q`.
    pub fn any_within(&self, q: &Point2, radius: f64) -> bool {
        let (cx, cy) = cell_of(q, self.cell);
        let reach = (radius / self.cell).ceil() as i64 + 1;
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for &i in self.cell_items(cx + dx, cy + dy) {
                    if q.dist(&self.points[i as usize]) <= radius {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// Indices of every point within `radius` of `q`, ascending.
    pub fn all_within(&self, q: &Point2, radius: f64) -> Vec<usize> {
        let (cx, cy) = cell_of(q, self.cell);
        let reach = (radius / self.cell).ceil() as i64 + 1;
        let mut out = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for &i in self.cell_items(cx + dx, cy + dy) {
                    if q.dist(&self.points[i as usize]) <= radius {
                        out.push(i as usize);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Grid index over segments. Each segment is registered in every cell its
/// bounding box overlaps; the ring bound used for points applies unchanged
/// because a segment whose cells all lie outside ring `r` has every point
/// farther than `(r - 1) * cell`.
#[derive(Debug)]
pub struct SegmentIndex {
    cell: f64,
    cells: CellMap<Vec<u32>>,
    segments: Vec<Segment2>,
}

impl SegmentIndex {
    pub fn build(segments: &[Segment2], cell: f64) -> Self {
        assert!(cell > 0.0);
        let mut cells: CellMap<Vec<u32>> = CellMap::default();
        for (i, s) in segments.iter().enumerate() {
            let x0 = (s.a.x.min(s.b.x) / cell).floor() as i64;
            let x1 = (s.a.x.max(s.b.x) / cell).floor() as i64;
            let y0 = (s.a.y.min(s.b.y) / cell).floor() as i64;
            let y1 = (s.a.y.max(s.b.y) / cell).floor() as i64;
            for cx in x0..=x1 {
                for cy in y0..=y1 {
                    cells.entry((cx, cy)).or_default().push(i as u32);
                }
            }
        }
        Self { cell, cells, segments: segments.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segment(&self, i: usize) -> &Segment2 {
        &self.segments[i]
    }

    fn linear_scan(&self, q: &Point2) -> (usize, f64) {
        let mut best_idx = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (i, s) in self.segments.iter().enumerate() {
            let d = super::point_to_segment_distance(q, s);
            if d < best_d {
                best_d = d;
                best_idx = i;
            }
        }
        (best_idx, best_d)
    }

    /// Exact nearest segment to `q`, ties toward the lower index.
    pub fn nearest(&self, q: &Point2) -> (usize, f64) {
        assert!(!self.segments.is_empty(), "nearest() on empty index");
        let (cx, cy) = cell_of(q, self.cell);
        let mut best_idx = usize::MAX;
        let mut best_d = f64::INFINITY;
        let mut ring = 0i64;
        while !ring_closed(ring, self.cell, best_d) {
            if ring > MAX_RINGS {
                return self.linear_scan(q);
            }
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    if dx.abs().max(dy.abs()) != ring {
                        continue;
                    }
                    if let Some(items) = self.cells.get(&(cx + dx, cy + dy)) {
                        for &i in items {
                            let s = &self.segments[i as usize];
                            let d = super::point_to_segment_distance(q, s);
                            if d < best_d || (d == best_d && (i as usize) < best_idx) {
                                best_d = d;
                                best_idx = i as usize;
                            }
                        }
                    }
                }
            }
            ring += 1;
        }
        (best_idx, best_d)
    }
}
