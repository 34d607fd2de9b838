//! Incremental global vector-map construction from frame observations.
//!
//! Per frame: transform to the global frame, associate against the current
//! map (by persistent ID first, geometrically otherwise), merge matched
//! polylines or initialize new elements, then suppress short one-frame
//! fragments and snap compatible endpoints. A final resample-and-simplify
//! pass produces the compact map.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    arc_length, densify, resample, simplify, symmetric_discrepancy, ClassMap, Point2, Polyline,
    SemanticClass,
};
use crate::map_model::{FrameObservation, GlobalPolyline, GlobalVectorMap};

#[derive(Error, Debug)]
pub enum FusionError {
    #[error("merge produced a degenerate polyline (class {0:?}, global id {1})")]
    DegenerateMerge(SemanticClass, u64),
}

/// Thresholds for the map builder. All distances in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Arc-length sampling step used for association and merging.
    pub resample_step: f64,
    /// Maximum symmetric discrepancy for a geometric association.
    pub assoc_threshold: f64,
    /// New samples closer than this to an existing sample are duplicates.
    pub dup_tolerance: f64,
    /// Maximum endpoint gap for snapping two same-class elements.
    pub snap_dist: f64,
    /// Maximum deviation from opposed terminal tangents when snapping, degrees.
    pub snap_angle_deg: f64,
    /// Elements shorter than this and seen in a single frame are suppressed.
    pub min_fragment_len: f64,
    /// Douglas-Peucker tolerance of the final simplification.
    pub simplify_tol: f64,
    /// Replace retained samples by the mean of all samples within
    /// `dup_tolerance` during merges.
    pub local_averaging: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            resample_step: 0.2,
            assoc_threshold: 1.0,
            dup_tolerance: 0.15,
            snap_dist: 0.5,
            snap_angle_deg: 15.0,
            min_fragment_len: 1.0,
            simplify_tol: 0.05,
            local_averaging: false,
        }
    }
}

/// Outcome of associating one frame's polylines against the map.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult {
    /// Per class, per frame polyline (input order): the matched global id
    /// and the symmetric discrepancy to it, or `None`.
    pub matches: ClassMap<Vec<Option<Match>>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub global_id: u64,
    pub cost: f64,
    pub by_id: bool,
}

/// Transforms a frame's polylines into the global frame using its ego-pose
/// reference. Classes and IDs are preserved.
pub fn transform_frame(obs: &FrameObservation) -> ClassMap<Vec<(Polyline, Option<u64>)>> {
    ClassMap::from_fn(|class| {
        obs.polylines
            .get(class)
            .iter()
            .map(|fp| (obs.ego_pose_ref.apply_polyline(&fp.geometry), fp.persistent_id))
            .collect()
    })
}

/// Associates frame polylines (already in the global frame) with map elements.
///
/// A polyline whose persistent ID is recorded in a map element matches that
/// element unconditionally; ID matches may share a target (fragments of one
/// physical element carry one ID). The remaining polylines are matched
/// greedily by ascending symmetric discrepancy, one-to-one, accepting only
/// costs below the association threshold. Ties break toward the lower
/// global id, then the lower polyline index.
pub fn associate(
    frame_polys: &ClassMap<Vec<(Polyline, Option<u64>)>>,
    map: &GlobalVectorMap,
    cfg: &FusionConfig,
) -> AssociationResult {
    let matches = ClassMap::from_fn(|class| {
        let polys = frame_polys.get(class);
        let elems = map.elements(class);
        let mut out: Vec<Option<Match>> = vec![None; polys.len()];

        // ID pass.
        let mut id_taken: Vec<bool> = vec![false; elems.len()];
        for (i, (poly, id)) in polys.iter().enumerate() {
            if let Some(id) = id {
                if let Some((j, elem)) =
                    elems.iter().enumerate().find(|(_, e)| e.source_ids.contains(id))
                {
                    let cost = symmetric_discrepancy(poly, &elem.geometry, cfg.resample_step)
                        .expect("same class");
                    out[i] = Some(Match { global_id: elem.global_id, cost, by_id: true });
                    id_taken[j] = true;
                }
            }
        }

        // Geometric pass: greedy ascending-cost one-to-one assignment. Pairs
        // whose bounding boxes are further apart than the threshold cannot
        // pass the gate (the discrepancy is bounded below by the box gap).
        let mut candidates: Vec<(f64, u64, usize, usize)> = Vec::new();
        for (i, (poly, _)) in polys.iter().enumerate() {
            if out[i].is_some() {
                continue;
            }
            let poly_box = poly.bbox();
            for (j, elem) in elems.iter().enumerate() {
                if id_taken[j] {
                    continue;
                }
                if crate::geom::bbox_gap(poly_box, elem.geometry.bbox()) >= cfg.assoc_threshold {
                    continue;
                }
                let cost = symmetric_discrepancy(poly, &elem.geometry, cfg.resample_step)
                    .expect("same class");
                if cost < cfg.assoc_threshold {
                    candidates.push((cost, elem.global_id, i, j));
                }
            }
        }
        candidates.sort_by(|a, b| {
            a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
        });
        let mut elem_taken = id_taken;
        for (cost, gid, i, j) in candidates {
            if out[i].is_some() || elem_taken[j] {
                continue;
            }
            out[i] = Some(Match { global_id: gid, cost, by_id: false });
            elem_taken[j] = true;
        }
        out
    });
    AssociationResult { matches }
}

/// Signed arc-length coordinate of `p` along `elem`: the arc position of the
/// closest polyline point, extended linearly past the ends so overhanging
/// samples order by how far they extend.
fn signed_projection(elem: &Polyline, cum: &[f64], p: &Point2) -> f64 {
    let verts = elem.vertices();
    let total = *cum.last().unwrap();
    let mut best_d = f64::INFINITY;
    let mut best_s = 0.0;
    for (i, w) in verts.windows(2).enumerate() {
        let vx = w[1].x - w[0].x;
        let vy = w[1].y - w[0].y;
        let len_sq = vx * vx + vy * vy;
        let t = (((p.x - w[0].x) * vx + (p.y - w[0].y) * vy) / len_sq).clamp(0.0, 1.0);
        let q = Point2::new(w[0].x + t * vx, w[0].y + t * vy);
        let d = p.dist(&q);
        if d < best_d {
            best_d = d;
            best_s = cum[i] + t * (cum[i + 1] - cum[i]);
        }
    }
    if best_s <= 0.0 + 1e-12 {
        let u = elem.outward_tangent(true);
        let over = (p.x - verts[0].x) * u.x + (p.y - verts[0].y) * u.y;
        if over > 0.0 {
            return -over;
        }
    }
    if best_s >= total - 1e-12 {
        let u = elem.outward_tangent(false);
        let last = verts[verts.len() - 1];
        let over = (p.x - last.x) * u.x + (p.y - last.y) * u.y;
        if over > 0.0 {
            return total + over;
        }
    }
    best_s
}

/// Merges a new same-class polyline into a global element.
///
/// Both sides are resampled; new samples that duplicate an existing sample
/// (within `dup_tolerance`) are dropped, the rest are ordered by signed
/// projection onto the current element and the polyline is rebuilt.
pub fn merge_into(
    elem: &GlobalPolyline,
    new_poly: &Polyline,
    frame_index: u64,
    persistent_id: Option<u64>,
    cfg: &FusionConfig,
) -> Result<GlobalPolyline, FusionError> {
    let class = elem.geometry.class_id();
    let old_samples = resample(&elem.geometry, cfg.resample_step);
    let new_samples = resample(new_poly, cfg.resample_step);

    let cell = cfg.resample_step.max(0.5);
    let old_index = crate::geom::PointIndex::build(&old_samples, cell);
    let mut added: Vec<Point2> = Vec::new();
    for p in &new_samples {
        let dup = old_index.any_within(p, cfg.dup_tolerance)
            || added.iter().any(|q| q.dist(p) <= cfg.dup_tolerance);
        if !dup {
            added.push(*p);
        }
    }

    // Old samples sit at their own arc positions by construction; only the
    // added samples need projecting (overhangs get a signed extension).
    let cum = elem.geometry.cumulative_lengths();
    let total = *cum.last().unwrap();
    let mut ordered: Vec<(f64, usize, Point2)> = old_samples
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let s = if k + 1 == old_samples.len() { total } else { k as f64 * cfg.resample_step };
            (s, k, *p)
        })
        .collect();
    for (j, p) in added.iter().enumerate() {
        ordered.push((signed_projection(&elem.geometry, &cum, p), old_samples.len() + j, *p));
    }
    ordered.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let mut points: Vec<Point2> = ordered.iter().map(|(_, _, p)| *p).collect();

    if cfg.local_averaging {
        let pool: Vec<Point2> =
            old_samples.iter().chain(new_samples.iter()).copied().collect();
        let pool_index = crate::geom::PointIndex::build(&pool, cell);
        points = points
            .iter()
            .map(|p| {
                let near = pool_index.all_within(p, cfg.dup_tolerance);
                let n = near.len() as f64;
                let sx: f64 = near.iter().map(|&i| pool[i].x).sum();
                let sy: f64 = near.iter().map(|&i| pool[i].y).sum();
                Point2::new(sx / n, sy / n)
            })
            .collect();
    }

    let geometry = Polyline::dedup(class, points)
        .map_err(|_| FusionError::DegenerateMerge(class, elem.global_id))?;

    let mut support_frames = elem.support_frames.clone();
    support_frames.insert(frame_index);
    let mut source_ids = elem.source_ids.clone();
    if let Some(id) = persistent_id {
        source_ids.insert(id);
    }
    Ok(GlobalPolyline { global_id: elem.global_id, geometry, support_frames, source_ids })
}

/// Removes elements shorter than `min_fragment_len` that are supported by a
/// single frame. Strict inequality: an element exactly at the threshold stays.
pub fn suppress_fragments(map: &GlobalVectorMap, cfg: &FusionConfig) -> GlobalVectorMap {
    let classes = ClassMap::from_fn(|class| {
        map.elements(class)
            .iter()
            .filter(|e| {
                !(arc_length(&e.geometry) < cfg.min_fragment_len && e.support_frames.len() == 1)
            })
            .cloned()
            .collect()
    });
    GlobalVectorMap { scene: map.scene.clone(), config: map.config.clone(), classes }
}

/// Endpoint kinds for snap candidates.
#[derive(Clone, Copy, PartialEq)]
enum End {
    Start,
    Finish,
}

fn endpoint(poly: &Polyline, end: End) -> Point2 {
    match end {
        End::Start => poly.first(),
        End::Finish => poly.last(),
    }
}

/// Joins `a` and `b` so the two snapped endpoints become adjacent interior
/// vertices. The gap, if any, remains as a connecting segment.
fn concatenate(a: &Polyline, ea: End, b: &Polyline, eb: End) -> Option<Polyline> {
    let first = match ea {
        End::Finish => a.clone(),
        End::Start => a.reversed(),
    };
    let second = match eb {
        End::Start => b.clone(),
        End::Finish => b.reversed(),
    };
    let mut pts = first.vertices().to_vec();
    pts.extend_from_slice(second.vertices());
    Polyline::dedup(a.class_id(), pts).ok()
}

/// Snaps nearby endpoints of same-class elements whose outward terminal
/// tangents are close to opposed. Pairs are processed in ascending endpoint
/// distance; the pass repeats until no pair qualifies. The lower global id
/// survives a join.
pub fn snap_endpoints(map: &GlobalVectorMap, cfg: &FusionConfig) -> GlobalVectorMap {
    let mut classes = ClassMap::from_fn(|class| map.elements(class).to_vec());
    let max_angle = cfg.snap_angle_deg.to_radians();

    for class in SemanticClass::ALL {
        let elems = classes.get_mut(class);
        loop {
            let mut best: Option<(f64, usize, usize, End, End)> = None;
            for i in 0..elems.len() {
                for j in i + 1..elems.len() {
                    for (ea, eb) in [
                        (End::Start, End::Start),
                        (End::Start, End::Finish),
                        (End::Finish, End::Start),
                        (End::Finish, End::Finish),
                    ] {
                        let pa = endpoint(&elems[i].geometry, ea);
                        let pb = endpoint(&elems[j].geometry, eb);
                        let d = pa.dist(&pb);
                        if d > cfg.snap_dist {
                            continue;
                        }
                        let ta = elems[i].geometry.outward_tangent(matches!(ea, End::Start));
                        let tb = elems[j].geometry.outward_tangent(matches!(eb, End::Start));
                        // Opposed tangents have dot -1; allow snap_angle of slack.
                        let dot = (ta.x * tb.x + ta.y * tb.y).clamp(-1.0, 1.0);
                        let deviation = std::f64::consts::PI - dot.acos();
                        if deviation > max_angle {
                            continue;
                        }
                        let better = match &best {
                            None => true,
                            Some((bd, ..)) => {
                                d < *bd
                                    || (d == *bd
                                        && (elems[i].global_id, elems[j].global_id)
                                            < best_pair_ids(elems, &best))
                            }
                        };
                        if better {
                            best = Some((d, i, j, ea, eb));
                        }
                    }
                }
            }
            let Some((_, i, j, ea, eb)) = best else { break };
            let joined = concatenate(&elems[i].geometry, ea, &elems[j].geometry, eb);
            let Some(geometry) = joined else { break };
            let (keep, drop) = if elems[i].global_id <= elems[j].global_id { (i, j) } else { (j, i) };
            let dropped = elems[drop].clone();
            let target = &mut elems[keep];
            target.geometry = geometry;
            target.support_frames =
                target.support_frames.union(&dropped.support_frames).copied().collect();
            target.source_ids = target.source_ids.union(&dropped.source_ids).copied().collect();
            elems.remove(drop);
        }
    }
    GlobalVectorMap { scene: map.scene.clone(), config: map.config.clone(), classes }
}

fn best_pair_ids(
    elems: &[GlobalPolyline],
    best: &Option<(f64, usize, usize, End, End)>,
) -> (u64, u64) {
    match best {
        Some((_, i, j, _, _)) => (elems[*i].global_id, elems[*j].global_id),
        None => (u64::MAX, u64::MAX),
    }
}

/// Near-uniform resampling (corner-preserving) followed by simplification.
/// Idempotent: re-finalizing a finalized map leaves geometry unchanged.
pub fn finalize(map: &GlobalVectorMap, cfg: &FusionConfig) -> GlobalVectorMap {
    let classes = ClassMap::from_fn(|class| {
        map.elements(class)
            .iter()
            .map(|e| {
                let dense = densify(&e.geometry, cfg.resample_step);
                let poly = Polyline::dedup(class, dense).expect("densify keeps all vertices");
                GlobalPolyline {
                    global_id: e.global_id,
                    geometry: simplify(&poly, cfg.simplify_tol),
                    support_frames: e.support_frames.clone(),
                    source_ids: e.source_ids.clone(),
                }
            })
            .collect()
    });
    GlobalVectorMap { scene: map.scene.clone(), config: map.config.clone(), classes }
}

/// Builds the global vector map from an ordered frame stream.
///
/// Deterministic: identical inputs and config produce identical maps.
pub fn build_map(
    scene: &str,
    frames: &[FrameObservation],
    cfg: &FusionConfig,
) -> Result<GlobalVectorMap, FusionError> {
    let mut map = GlobalVectorMap::empty(scene, cfg.clone());
    let mut next_gid: ClassMap<u64> = ClassMap::default();

    for obs in frames {
        let transformed = transform_frame(obs);
        let assoc = associate(&transformed, &map, cfg);

        for class in SemanticClass::ALL {
            let polys = transformed.get(class);
            let matches = assoc.matches.get(class);
            // Elements created during this frame, for same-frame ID reunion.
            let mut created: Vec<(u64, u64)> = Vec::new(); // (persistent id, global id)

            for (i, (poly, pid)) in polys.iter().enumerate() {
                let target_gid = match &matches[i] {
                    Some(m) => Some(m.global_id),
                    None => pid.and_then(|id| {
                        created.iter().find(|(p, _)| *p == id).map(|(_, g)| *g)
                    }),
                };
                let elems = map.classes.get_mut(class);
                match target_gid {
                    Some(gid) => {
                        let pos = elems
                            .iter()
                            .position(|e| e.global_id == gid)
                            .expect("association targets live element");
                        elems[pos] =
                            merge_into(&elems[pos], poly, obs.frame_index, *pid, cfg)?;
                    }
                    None => {
                        let gid = *next_gid.get(class);
                        *next_gid.get_mut(class) += 1;
                        let mut source_ids = BTreeSet::new();
                        if let Some(id) = pid {
                            source_ids.insert(*id);
                            created.push((*id, gid));
                        }
                        elems.push(GlobalPolyline {
                            global_id: gid,
                            geometry: poly.clone(),
                            support_frames: BTreeSet::from([obs.frame_index]),
                            source_ids,
                        });
                    }
                }
            }
        }

        map = suppress_fragments(&map, cfg);
        map = snap_endpoints(&map, cfg);
    }

    map = suppress_fragments(&map, cfg);
    map = snap_endpoints(&map, cfg);
    Ok(finalize(&map, cfg))
}
