//! Coverage analysis along global polylines and gap-dependent line
//! completion.
//!
//! A localized frame covers parts of each global element; short uncovered
//! gaps are bridged with straight segments, long ones are spliced from the
//! global geometry, and the result is stitched into one continuous polyline
//! per element with per-run provenance.

use serde::{Deserialize, Serialize};

use crate::geom::{arc_length, ClassMap, Point2, Polyline, Segment2, SegmentIndex, SemanticClass};
use crate::map_model::{FrameObservation, GlobalPolyline, GlobalVectorMap, Pose2D};

/// Completion parameters. Distances in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionConfig {
    /// Lateral tolerance: a map sample is covered when frame geometry passes
    /// within this distance.
    pub buffer: f64,
    /// Gaps shorter than this are bridged straight; longer ones are spliced
    /// from the global element.
    pub eta: f64,
    /// Maximum junction tangent mismatch for moving splice endpoints onto the
    /// adjacent observed geometry, degrees.
    pub tangent_tol_deg: f64,
    /// Arc-length sampling step of the coverage test.
    pub resample_step: f64,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self { buffer: 0.75, eta: 2.0, tangent_tol_deg: 20.0, resample_step: 0.2 }
    }
}

/// One maximal run of equal coverage along an element's arc length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageInterval {
    pub global_id: u64,
    pub start_s: f64,
    pub end_s: f64,
    pub covered: bool,
}

/// Samples the element at the configured step and tests each sample against
/// the frame-polyline segments; consecutive same-flag samples merge into
/// intervals with boundaries at flip midpoints. The intervals partition
/// `[0, L]` exactly.
pub fn coverage(
    elem: &GlobalPolyline,
    aligned_frame_polys: &[Polyline],
    cfg: &CompletionConfig,
) -> Vec<CoverageInterval> {
    let geometry = &elem.geometry;
    let total = arc_length(geometry);
    let segments: Vec<Segment2> = aligned_frame_polys
        .iter()
        .flat_map(|p| {
            let class = p.class_id();
            p.vertices()
                .windows(2)
                .filter_map(move |w| Segment2::new(w[0], w[1], class).ok())
                .collect::<Vec<_>>()
        })
        .collect();
    if segments.is_empty() {
        return vec![CoverageInterval { global_id: elem.global_id, start_s: 0.0, end_s: total, covered: false }];
    }
    let index = SegmentIndex::build(&segments, cfg.resample_step.max(0.5));

    // Sample positions 0, step, ..., plus the terminal vertex.
    let cum = geometry.cumulative_lengths();
    let mut stations: Vec<f64> = Vec::new();
    let mut k = 0u64;
    loop {
        let s = k as f64 * cfg.resample_step;
        if s >= total - 1e-12 {
            break;
        }
        stations.push(s);
        k += 1;
    }
    stations.push(total);

    let flags: Vec<bool> = stations
        .iter()
        .map(|&s| index.nearest(&geometry.point_at_with(&cum, s)).1 <= cfg.buffer)
        .collect();

    let mut intervals = Vec::new();
    let mut start = 0.0;
    let mut current = flags[0];
    for i in 1..stations.len() {
        if flags[i] != current {
            let boundary = 0.5 * (stations[i - 1] + stations[i]);
            intervals.push(CoverageInterval {
                global_id: elem.global_id,
                start_s: start,
                end_s: boundary,
                covered: current,
            });
            start = boundary;
            current = flags[i];
        }
    }
    intervals.push(CoverageInterval {
        global_id: elem.global_id,
        start_s: start,
        end_s: total,
        covered: current,
    });
    intervals
}

/// Provenance of a run of completed geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceTag {
    #[serde(rename = "obs")]
    Observed,
    #[serde(rename = "bridge")]
    Bridged,
    #[serde(rename = "splice")]
    Spliced,
}

/// A contiguous vertex run with one provenance tag.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedRun {
    pub src: SourceTag,
    pub pts: Vec<Point2>,
}

/// One completed element: consecutive runs form a single continuous polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedPolyline {
    pub class_id: SemanticClass,
    /// The global element this completion follows, if any.
    pub source_gid: Option<u64>,
    pub runs: Vec<CompletedRun>,
}

impl CompletedPolyline {
    /// The stitched geometry: run vertices concatenated with duplicate
    /// junction vertices removed.
    pub fn geometry(&self) -> Polyline {
        let pts: Vec<Point2> = self.runs.iter().flat_map(|r| r.pts.iter().copied()).collect();
        Polyline::dedup(self.class_id, pts).expect("completed runs form a valid polyline")
    }
}

/// The class-partitioned completed vector set of one frame, in the global
/// frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompletedSet {
    pub classes: ClassMap<Vec<CompletedPolyline>>,
}

impl CompletedSet {
    pub fn polylines(&self, class: SemanticClass) -> Vec<Polyline> {
        self.classes.get(class).iter().map(|c| c.geometry()).collect()
    }

    pub fn polylines_by_class(&self) -> ClassMap<Vec<Polyline>> {
        ClassMap::from_fn(|c| self.polylines(c))
    }
}

/// Arc-length projection of `p` onto `geometry`: `(station, distance)`.
fn project(geometry: &Polyline, cum: &[f64], p: &Point2) -> (f64, f64) {
    let verts = geometry.vertices();
    let mut best = (0.0, f64::INFINITY);
    for (i, w) in verts.windows(2).enumerate() {
        let vx = w[1].x - w[0].x;
        let vy = w[1].y - w[0].y;
        let len_sq = vx * vx + vy * vy;
        let t = (((p.x - w[0].x) * vx + (p.y - w[0].y) * vy) / len_sq).clamp(0.0, 1.0);
        let q = Point2::new(w[0].x + t * vx, w[0].y + t * vy);
        let d = p.dist(&q);
        if d < best.1 {
            best = (cum[i] + t * (cum[i + 1] - cum[i]), d);
        }
    }
    best
}

/// Mean distance of a polyline's vertices to an element.
fn mean_distance(poly: &Polyline, geometry: &Polyline, cum: &[f64]) -> f64 {
    let sum: f64 = poly.vertices().iter().map(|p| project(geometry, cum, p).1).sum();
    sum / poly.vertices().len() as f64
}

/// An observed piece assigned to an element, oriented along it.
struct AssignedPiece {
    poly: Polyline,
    start_s: f64,
    end_s: f64,
}

fn travel_direction(p: &Polyline, at_start: bool) -> Point2 {
    let t = p.outward_tangent(at_start);
    if at_start {
        Point2::new(-t.x, -t.y)
    } else {
        t
    }
}

fn tangent_mismatch_ok(prev_dir: Point2, next_dir: Point2, tol_deg: f64) -> bool {
    let dot = (prev_dir.x * next_dir.x + prev_dir.y * next_dir.y).clamp(-1.0, 1.0);
    dot.acos() <= tol_deg.to_radians()
}

/// Splices the element's sub-polyline over `[a, b]`, moving its endpoints to
/// the adjacent observed vertices where the endpoint lies within the buffer
/// and the junction tangents agree.
fn make_splice(
    elem: &Polyline,
    a: f64,
    b: f64,
    left_anchor: Option<Point2>,
    right_anchor: Option<Point2>,
    cfg: &CompletionConfig,
) -> Option<Vec<Point2>> {
    let sub = elem.sub_polyline(a, b)?;
    let mut pts = sub.vertices().to_vec();
    if let Some(anchor) = left_anchor {
        let start = pts[0];
        if anchor.dist(&start) <= cfg.buffer {
            // Direction into the splice vs direction the observed piece ends with
            // is checked by the caller; here only endpoint proximity applies.
            pts[0] = anchor;
        }
    }
    if let Some(anchor) = right_anchor {
        let end = *pts.last().unwrap();
        if anchor.dist(&end) <= cfg.buffer {
            let n = pts.len();
            pts[n - 1] = anchor;
        }
    }
    Some(pts)
}

/// Completes one element from its assigned observed pieces.
fn complete_element(
    elem: &GlobalPolyline,
    pieces: Vec<Polyline>,
    cfg: &CompletionConfig,
) -> CompletedPolyline {
    let class = elem.geometry.class_id();
    let total = arc_length(&elem.geometry);
    let cum = elem.geometry.cumulative_lengths();

    if pieces.is_empty() {
        return CompletedPolyline {
            class_id: class,
            source_gid: Some(elem.global_id),
            runs: vec![CompletedRun {
                src: SourceTag::Spliced,
                pts: elem.geometry.vertices().to_vec(),
            }],
        };
    }

    // Orient pieces along the element and sort by entry station.
    let mut assigned: Vec<AssignedPiece> = pieces
        .into_iter()
        .map(|poly| {
            let s_first = project(&elem.geometry, &cum, &poly.first()).0;
            let s_last = project(&elem.geometry, &cum, &poly.last()).0;
            let poly = if s_first <= s_last { poly } else { poly.reversed() };
            let (a, b) = if s_first <= s_last { (s_first, s_last) } else { (s_last, s_first) };
            AssignedPiece { poly, start_s: a, end_s: b }
        })
        .collect();
    assigned.sort_by(|a, b| {
        a.start_s.partial_cmp(&b.start_s).unwrap().then(a.end_s.partial_cmp(&b.end_s).unwrap())
    });

    // Drop pieces fully contained in the span of an earlier one; trim heads
    // of partial overlaps so the chain advances monotonically.
    let mut chain: Vec<AssignedPiece> = Vec::new();
    for piece in assigned {
        match chain.last() {
            None => chain.push(piece),
            Some(prev) if piece.end_s <= prev.end_s => continue,
            Some(prev) if piece.start_s < prev.end_s => {
                let cut = prev.end_s;
                let keep: Vec<Point2> = piece
                    .poly
                    .vertices()
                    .iter()
                    .filter(|p| project(&elem.geometry, &cum, p).0 > cut)
                    .copied()
                    .collect();
                if let Ok(poly) = Polyline::dedup(class, keep) {
                    let start_s = project(&elem.geometry, &cum, &poly.first()).0;
                    chain.push(AssignedPiece { poly, start_s, end_s: piece.end_s });
                }
            }
            Some(_) => chain.push(piece),
        }
    }

    let mut runs: Vec<CompletedRun> = Vec::new();

    // Leading gap: splice whatever the observations never reached.
    let first = &chain[0];
    if first.start_s > cfg.resample_step {
        if let Some(raw) = elem.geometry.sub_polyline(0.0, first.start_s) {
            let right_dir = travel_direction(&first.poly, true);
            let splice_end_dir = travel_direction(&raw, false);
            let right_anchor = tangent_mismatch_ok(splice_end_dir, right_dir, cfg.tangent_tol_deg)
                .then_some(first.poly.first());
            if let Some(pts) =
                make_splice(&elem.geometry, 0.0, first.start_s, None, right_anchor, cfg)
            {
                runs.push(CompletedRun { src: SourceTag::Spliced, pts });
            }
        }
    }

    for i in 0..chain.len() {
        runs.push(CompletedRun {
            src: SourceTag::Observed,
            pts: chain[i].poly.vertices().to_vec(),
        });
        if i + 1 < chain.len() {
            let gap = chain[i + 1].start_s - chain[i].end_s;
            let left = chain[i].poly.last();
            let right = chain[i + 1].poly.first();
            if gap < cfg.eta {
                if left.dist(&right) > crate::geom::MIN_VERTEX_SEP {
                    runs.push(CompletedRun { src: SourceTag::Bridged, pts: vec![left, right] });
                }
            } else {
                let left_dir = travel_direction(&chain[i].poly, false);
                let right_dir = travel_direction(&chain[i + 1].poly, true);
                let raw = elem.geometry.sub_polyline(chain[i].end_s, chain[i + 1].start_s);
                if let Some(raw) = raw {
                    let splice_start_dir = travel_direction(&raw, true);
                    let splice_end_dir = travel_direction(&raw, false);
                    let left_anchor = tangent_mismatch_ok(left_dir, splice_start_dir, cfg.tangent_tol_deg)
                        .then_some(left);
                    let right_anchor = tangent_mismatch_ok(splice_end_dir, right_dir, cfg.tangent_tol_deg)
                        .then_some(right);
                    if let Some(pts) = make_splice(
                        &elem.geometry,
                        chain[i].end_s,
                        chain[i + 1].start_s,
                        left_anchor,
                        right_anchor,
                        cfg,
                    ) {
                        runs.push(CompletedRun { src: SourceTag::Spliced, pts });
                    }
                }
            }
        }
    }

    // Trailing gap.
    let last = chain.last().unwrap();
    if last.end_s < total - cfg.resample_step {
        let left_dir = travel_direction(&last.poly, false);
        if let Some(raw) = elem.geometry.sub_polyline(last.end_s, total) {
            let splice_start_dir = travel_direction(&raw, true);
            let left_anchor = tangent_mismatch_ok(left_dir, splice_start_dir, cfg.tangent_tol_deg)
                .then_some(last.poly.last());
            if let Some(pts) =
                make_splice(&elem.geometry, last.end_s, total, left_anchor, None, cfg)
            {
                runs.push(CompletedRun { src: SourceTag::Spliced, pts });
            }
        }
    }

    CompletedPolyline { class_id: class, source_gid: Some(elem.global_id), runs }
}

/// Applies the refined pose to the frame and completes every global element.
///
/// Observed polylines are assigned to the nearest global element (mean vertex
/// distance within the buffer); unassigned ones are passed through as pure
/// observations. Elements without any observation are emitted whole as
/// spliced geometry.
pub fn complete(
    map: &GlobalVectorMap,
    frame: &FrameObservation,
    theta: &Pose2D,
    cfg: &CompletionConfig,
) -> CompletedSet {
    let mut out = CompletedSet::default();
    for class in SemanticClass::ALL {
        let aligned: Vec<Polyline> = frame
            .polylines
            .get(class)
            .iter()
            .map(|fp| theta.apply_polyline(&fp.geometry))
            .collect();
        let elems = map.elements(class);

        if elems.is_empty() {
            for poly in aligned {
                out.classes.get_mut(class).push(CompletedPolyline {
                    class_id: class,
                    source_gid: None,
                    runs: vec![CompletedRun {
                        src: SourceTag::Observed,
                        pts: poly.vertices().to_vec(),
                    }],
                });
            }
            continue;
        }

        let cums: Vec<Vec<f64>> = elems.iter().map(|e| e.geometry.cumulative_lengths()).collect();
        let boxes: Vec<(Point2, Point2)> = elems.iter().map(|e| e.geometry.bbox()).collect();
        let mut assigned: Vec<Vec<Polyline>> = vec![Vec::new(); elems.len()];
        for poly in aligned {
            let poly_box = poly.bbox();
            let mut best: Option<(usize, f64)> = None;
            for (j, elem) in elems.iter().enumerate() {
                // The mean distance is bounded below by the bounding-box gap;
                // elements beyond the buffer cannot win the assignment.
                if crate::geom::bbox_gap(poly_box, boxes[j]) > cfg.buffer {
                    continue;
                }
                let d = mean_distance(&poly, &elem.geometry, &cums[j]);
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            match best {
                Some((j, d)) if d <= cfg.buffer => assigned[j].push(poly),
                _ => out.classes.get_mut(class).push(CompletedPolyline {
                    class_id: class,
                    source_gid: None,
                    runs: vec![CompletedRun {
                        src: SourceTag::Observed,
                        pts: poly.vertices().to_vec(),
                    }],
                }),
            }
        }

        for (elem, pieces) in elems.iter().zip(assigned) {
            out.classes.get_mut(class).push(complete_element(elem, pieces, cfg));
        }
    }
    out
}

/// Covered fraction of the reference arc length, percent per class.
///
/// The reference is sampled at the configured step; a sample counts as
/// covered when output geometry of the same class passes within the buffer.
/// Classes absent from the reference yield `None`.
pub fn completion_rate(
    output: &ClassMap<Vec<Polyline>>,
    reference: &GlobalVectorMap,
    cfg: &CompletionConfig,
) -> ClassMap<Option<f64>> {
    ClassMap::from_fn(|class| {
        let refs = reference.elements(class);
        if refs.is_empty() {
            return None;
        }
        let out_polys = output.get(class);
        let mut covered = 0.0;
        let mut total = 0.0;
        for elem in refs {
            for interval in coverage(elem, out_polys, cfg) {
                total += interval.end_s - interval.start_s;
                if interval.covered {
                    covered += interval.end_s - interval.start_s;
                }
            }
        }
        Some(100.0 * covered / total)
    })
}

#[cfg(test)]
mod tests;
