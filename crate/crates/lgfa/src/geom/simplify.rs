//! Douglas-Peucker polyline simplification.

use super::Point2;

/// Distance from `p` to the closed span `[a, b]`, valid for `a == b`.
fn span_distance(p: &Point2, a: &Point2, b: &Point2) -> f64 {
    let vx = b.x - a.x;
    let vy = b.y - a.y;
    let len_sq = vx * vx + vy * vy;
    if len_sq <= 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * vx + (p.y - a.y) * vy) / len_sq).clamp(0.0, 1.0);
    p.dist(&Point2::new(a.x + t * vx, a.y + t * vy))
}

/// Returns the kept vertices. Endpoints always survive; every removed vertex
/// lies within `tolerance` of the chord it was dropped against (which is a
/// segment of the output), and the result is idempotent at fixed tolerance.
pub fn douglas_peucker(vertices: &[Point2], tolerance: f64) -> Vec<Point2> {
    let n = vertices.len();
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[n - 1] = true;

    let mut stack = vec![(0usize, n - 1)];
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let mut max_d = -1.0;
        let mut max_i = lo + 1;
        for i in lo + 1..hi {
            let d = span_distance(&vertices[i], &vertices[lo], &vertices[hi]);
            if d > max_d {
                max_d = d;
                max_i = i;
            }
        }
        if max_d > tolerance {
            keep[max_i] = true;
            stack.push((lo, max_i));
            stack.push((max_i, hi));
        }
    }

    vertices
        .iter()
        .zip(keep.iter())
        .filter_map(|(v, &k)| if k { Some(*v) } else { None })
        .collect()
}
