//! Class-constrained bidirectional robust ICP with a coarse-to-fine schedule.
//!
//! The solver alternates gated correspondence construction (forward
//! point-to-segment, backward point-to-point, both restricted to the same
//! semantic class), robust reweighting, and a closed-form weighted rigid fit.
//! A boundary-only coarse stage with a relaxed gate precedes the all-class
//! refinement stage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{
    ClassMap, Point2, PointIndex, Polyline, Segment2, SegmentIndex, SemanticClass,
};
use crate::map_model::{wrap_angle, FrameObservation, GlobalVectorMap, Pose2D};

#[derive(Error, Debug)]
pub enum LocalizationError {
    #[error("insufficient input: {0}")]
    InsufficientInput(String),
    #[error("degenerate geometry: correspondence set carries no alignment information")]
    DegenerateGeometry,
}

/// Solver parameters. Distances in meters, angles in the named units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizationConfig {
    /// Arc-length sampling step for both sides.
    pub resample_step: f64,
    /// Per-class weights in the objective.
    pub class_weights: ClassMap<f64>,
    /// Per-class correspondence gates of the fine stage.
    pub gates: ClassMap<f64>,
    /// Relaxed gate of the boundary-only coarse stage.
    pub coarse_gate: f64,
    pub coarse_iters: usize,
    pub fine_iters: usize,
    /// Huber threshold of the robust loss.
    pub huber_delta: f64,
    /// Convergence tolerance on the scaled pose update norm.
    pub eps_conv: f64,
    /// Meters-per-radian scale balancing rotation against translation in the
    /// pose update norm.
    pub pose_diff_scale: f64,
    /// Point caps (uniform arc-length decimation) for map and frame samples.
    pub max_points_global: usize,
    pub max_points_local: usize,
    /// Frames with fewer sampled points are rejected; classes with fewer
    /// sampled points on either side are skipped.
    pub min_points: usize,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            resample_step: 0.2,
            class_weights: ClassMap { ped_crossing: 1.0, divider: 1.0, boundary: 1.0 },
            gates: ClassMap { ped_crossing: 1.5, divider: 1.5, boundary: 1.8 },
            coarse_gate: 4.0,
            coarse_iters: 8,
            fine_iters: 15,
            huber_delta: 0.5,
            eps_conv: 1e-4,
            pose_diff_scale: 5.0,
            max_points_global: 40_000,
            max_points_local: 20_000,
            min_points: 30,
        }
    }
}

impl LocalizationConfig {
    /// Parameters used by the synthetic benchmark scenes. The default gates
    /// cannot out-reach the largest initial perturbations those scenes inject
    /// (a gate below the initial offset never captures the transverse
    /// elements that anchor the along-road direction), so the benchmark
    /// preset widens them; this stays far below the smallest same-class
    /// element separation, which keeps the class-constrained matching exact.
    pub fn synthetic_benchmark() -> Self {
        Self {
            gates: ClassMap { ped_crossing: 3.2, divider: 3.2, boundary: 3.5 },
            coarse_gate: 4.5,
            min_points: 10,
            ..Self::default()
        }
    }
}

/// Per-class sampled inputs of one localization problem.
///
/// `xs` holds current-frame samples in the ego frame, `ys` and `segs` the
/// global-map samples and the segments between adjacent samples of one
/// polyline. Segment indexes are built once at construction.
pub struct SampledClassSets {
    pub xs: ClassMap<Vec<Point2>>,
    pub ys: ClassMap<Vec<Point2>>,
    pub segs: ClassMap<Vec<Segment2>>,
    seg_index: ClassMap<Option<SegmentIndex>>,
    cell: f64,
}

/// Samples every polyline at `step` and applies the uniform decimation cap:
/// when the total exceeds `max_points`, every `ceil(n/max)`-th sample of each
/// polyline is kept, in arc-length order.
fn sample_polylines_capped(
    polys: &ClassMap<Vec<Polyline>>,
    step: f64,
    max_points: usize,
) -> ClassMap<Vec<Vec<Point2>>> {
    let raw = ClassMap::from_fn(|class| {
        polys.get(class).iter().map(|p| crate::geom::resample(p, step)).collect::<Vec<_>>()
    });
    let total: usize =
        SemanticClass::ALL.iter().map(|&c| raw.get(c).iter().map(Vec::len).sum::<usize>()).sum();
    if total <= max_points || max_points == 0 {
        return raw;
    }
    let k = total.div_ceil(max_points);
    ClassMap::from_fn(|class| {
        raw.get(class)
            .iter()
            .map(|samples| samples.iter().step_by(k).copied().collect())
            .collect()
    })
}

impl SampledClassSets {
    pub fn build(
        frame: &FrameObservation,
        map: &GlobalVectorMap,
        cfg: &LocalizationConfig,
    ) -> Self {
        let frame_polys = ClassMap::from_fn(|class| {
            frame.polylines.get(class).iter().map(|fp| fp.geometry.clone()).collect()
        });
        let map_polys = ClassMap::from_fn(|class| map.polylines(class));
        Self::from_polylines(&frame_polys, &map_polys, cfg)
    }

    pub fn from_polylines(
        frame_polys: &ClassMap<Vec<Polyline>>,
        map_polys: &ClassMap<Vec<Polyline>>,
        cfg: &LocalizationConfig,
    ) -> Self {
        let cell = cfg.resample_step.max(0.5);
        let x_lists = sample_polylines_capped(frame_polys, cfg.resample_step, cfg.max_points_local);
        let y_lists = sample_polylines_capped(map_polys, cfg.resample_step, cfg.max_points_global);

        let xs = ClassMap::from_fn(|c| x_lists.get(c).iter().flatten().copied().collect());
        let ys: ClassMap<Vec<Point2>> =
            ClassMap::from_fn(|c| y_lists.get(c).iter().flatten().copied().collect());
        let segs = ClassMap::from_fn(|c| {
            let mut out = Vec::new();
            for samples in y_lists.get(c) {
                for w in samples.windows(2) {
                    if let Ok(s) = Segment2::new(w[0], w[1], c) {
                        out.push(s);
                    }
                }
            }
            out
        });
        let seg_index = ClassMap::from_fn(|c| {
            let s = segs.get(c);
            if s.is_empty() {
                None
            } else {
                Some(SegmentIndex::build(s, cell))
            }
        });
        Self { xs, ys, segs, seg_index, cell }
    }

    pub fn total_frame_points(&self) -> usize {
        self.xs.total_len()
    }

    fn class_usable(&self, class: SemanticClass, min_points: usize) -> bool {
        self.xs.get(class).len() >= min_points
            && self.ys.get(class).len() >= min_points
            && !self.segs.get(class).is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrKind {
    Forward,
    Backward,
}

/// One gated correspondence. `source` is an untransformed current-frame
/// sample; `target` is a global-frame point (the foot of perpendicular on
/// the matched segment for forward pairs, a map sample for backward pairs).
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub kind: CorrKind,
    pub class_id: SemanticClass,
    pub source: Point2,
    pub target: Point2,
    pub residual: f64,
    pub weight: f64,
}

/// Builds class-wise gated correspondences under pose `theta`.
///
/// Classes with fewer than `min_points` samples on either side (or no
/// segments) contribute nothing; a gate of `None` excludes the class.
pub fn build_corr(
    sets: &SampledClassSets,
    theta: &Pose2D,
    gates: &ClassMap<Option<f64>>,
    min_points: usize,
) -> Vec<Correspondence> {
    let mut out = Vec::new();
    for class in SemanticClass::ALL {
        let Some(gate) = *gates.get(class) else { continue };
        if !sets.class_usable(class, min_points) {
            continue;
        }
        let xs = sets.xs.get(class);
        let ys = sets.ys.get(class);
        let seg_index = sets.seg_index.get(class).as_ref().unwrap();

        let transformed: Vec<Point2> = xs.iter().map(|&p| theta.apply(p)).collect();

        for (x, tx) in xs.iter().zip(transformed.iter()) {
            let (idx, d) = seg_index.nearest(tx);
            if d <= gate {
                out.push(Correspondence {
                    kind: CorrKind::Forward,
                    class_id: class,
                    source: *x,
                    target: seg_index.segment(idx).closest_point(tx),
                    residual: d,
                    weight: 1.0,
                });
            }
        }

        let x_index = PointIndex::build(&transformed, sets.cell);
        for y in ys {
            let (i, d) = x_index.nearest(y);
            if d <= gate {
                out.push(Correspondence {
                    kind: CorrKind::Backward,
                    class_id: class,
                    source: xs[i],
                    target: *y,
                    residual: d,
                    weight: 1.0,
                });
            }
        }
    }
    out
}

/// Standard IRLS weight of the Huber loss.
pub fn huber_irls(residual: f64, delta: f64) -> f64 {
    if residual <= delta {
        1.0
    } else {
        delta / residual
    }
}

/// Huber loss itself (used for objective evaluation).
pub fn huber_loss(residual: f64, delta: f64) -> f64 {
    if residual <= delta {
        0.5 * residual * residual
    } else {
        delta * (residual - 0.5 * delta)
    }
}

/// Assigns `w_c * huber_irls(residual)` to every correspondence.
pub fn robust_weights(corrs: &mut [Correspondence], cfg: &LocalizationConfig) {
    for c in corrs.iter_mut() {
        c.weight = cfg.class_weights.get(c.class_id) * huber_irls(c.residual, cfg.huber_delta);
    }
}

/// Closed-form weighted 2D rigid fit over `(source, target, weight)` pairs:
/// the global optimum of `sum w_i * |R(phi) x_i + t - y_i|^2`.
///
/// When the cross and dot sums both vanish the rotation is unobservable and
/// `phi = 0` is returned by convention. Errors only when the pair set carries
/// no weight at all.
pub fn weighted_procrustes(pairs: &[(Point2, Point2, f64)]) -> Result<Pose2D, LocalizationError> {
    let total_w: f64 = pairs.iter().map(|p| p.2).sum();
    if pairs.is_empty() || total_w <= 0.0 {
        return Err(LocalizationError::DegenerateGeometry);
    }
    let mut mx = Point2::new(0.0, 0.0);
    let mut my = Point2::new(0.0, 0.0);
    for (x, y, w) in pairs {
        mx.x += w * x.x;
        mx.y += w * x.y;
        my.x += w * y.x;
        my.y += w * y.y;
    }
    mx.x /= total_w;
    mx.y /= total_w;
    my.x /= total_w;
    my.y /= total_w;

    let mut cross = 0.0;
    let mut dot = 0.0;
    for (x, y, w) in pairs {
        let xc = Point2::new(x.x - mx.x, x.y - mx.y);
        let yc = Point2::new(y.x - my.x, y.y - my.y);
        cross += w * (xc.x * yc.y - xc.y * yc.x);
        dot += w * (xc.x * yc.x + xc.y * yc.y);
    }
    let phi = if cross == 0.0 && dot == 0.0 { 0.0 } else { cross.atan2(dot) };
    let (s, c) = phi.sin_cos();
    let tx = my.x - (c * mx.x - s * mx.y);
    let ty = my.y - (s * mx.x + c * mx.y);
    Ok(Pose2D::new(tx, ty, phi))
}

/// Scaled pose-update norm: `|(dtx, dty, scale * wrap(dphi))|_2`.
pub fn pose_diff(a: &Pose2D, b: &Pose2D, scale: f64) -> f64 {
    let dx = a.tx - b.tx;
    let dy = a.ty - b.ty;
    let dphi = scale * wrap_angle(a.phi - b.phi);
    (dx * dx + dy * dy + dphi * dphi).sqrt()
}

/// The class-weighted bidirectional objective (forward point-to-segment plus
/// backward point-to-point, averaged per class, summed over usable classes).
pub fn objective(
    sets: &SampledClassSets,
    theta: &Pose2D,
    gates: &ClassMap<Option<f64>>,
    cfg: &LocalizationConfig,
) -> f64 {
    let mut total = 0.0;
    for class in SemanticClass::ALL {
        if gates.get(class).is_none() || !sets.class_usable(class, cfg.min_points) {
            continue;
        }
        let w_c = *cfg.class_weights.get(class);
        let xs = sets.xs.get(class);
        let ys = sets.ys.get(class);
        let seg_index = sets.seg_index.get(class).as_ref().unwrap();
        let transformed: Vec<Point2> = xs.iter().map(|&p| theta.apply(p)).collect();

        let fwd: f64 = transformed
            .iter()
            .map(|p| huber_loss(seg_index.nearest(p).1, cfg.huber_delta))
            .sum::<f64>()
            / xs.len() as f64;

        let x_index = PointIndex::build(&transformed, sets.cell);
        let bwd: f64 = ys
            .iter()
            .map(|y| huber_loss(x_index.nearest(y).1, cfg.huber_delta))
            .sum::<f64>()
            / ys.len() as f64;

        total += w_c * (fwd + bwd);
    }
    total
}

/// Result of one solver run (or one stage of the two-stage schedule).
#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    pub pose: Pose2D,
    pub iterations: usize,
    pub converged: bool,
    pub correspondences_last: ClassMap<usize>,
}

/// Diagnostic output of `localize`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub pose: Pose2D,
    pub iterations_used: [usize; 2],
    pub final_objective: f64,
    pub converged: bool,
    pub correspondences_last: ClassMap<usize>,
}

/// Alternates correspondence construction, robust reweighting and the
/// weighted rigid update, stopping on convergence, an empty correspondence
/// set, or the iteration budget.
///
/// The per-class averages of the objective are carried into the rigid fit as
/// normalization factors (`1/|X^c|` forward, `1/|Y^c|` backward), so every
/// update is an IRLS step on the objective itself; no class drowns out
/// another by point count.
pub fn icp_solve(
    sets: &SampledClassSets,
    theta0: &Pose2D,
    gates: &ClassMap<Option<f64>>,
    iters: usize,
    cfg: &LocalizationConfig,
) -> Result<StageResult, LocalizationError> {
    let any_usable = SemanticClass::ALL
        .iter()
        .any(|&c| gates.get(c).is_some() && sets.class_usable(c, cfg.min_points));
    if !any_usable {
        return Err(LocalizationError::InsufficientInput(
            "every class is empty or below the minimum point count".into(),
        ));
    }

    let mut theta = *theta0;
    let mut iterations = 0;
    let mut converged = false;
    let mut corr_last: ClassMap<usize> = ClassMap::default();

    for _ in 0..iters {
        let mut corrs = build_corr(sets, &theta, gates, cfg.min_points);
        iterations += 1;
        corr_last = ClassMap::from_fn(|c| corrs.iter().filter(|p| p.class_id == c).count());
        if corrs.is_empty() {
            break;
        }
        robust_weights(&mut corrs, cfg);

        let pairs: Vec<(Point2, Point2, f64)> = corrs
            .iter()
            .map(|c| {
                let n = match c.kind {
                    CorrKind::Forward => sets.xs.get(c.class_id).len(),
                    CorrKind::Backward => sets.ys.get(c.class_id).len(),
                } as f64;
                (c.source, c.target, c.weight / n)
            })
            .collect();

        let theta_new = match weighted_procrustes(&pairs) {
            Ok(t) => t,
            Err(LocalizationError::DegenerateGeometry) => break,
            Err(e) => return Err(e),
        };
        let step = pose_diff(&theta_new, &theta, cfg.pose_diff_scale);
        theta = theta_new;
        if step < cfg.eps_conv {
            converged = true;
            break;
        }
    }

    // No silent divergence: a run that worsened the objective is not
    // reported as converged.
    if converged && objective(sets, &theta, gates, cfg) > objective(sets, theta0, gates, cfg) + 1e-12
    {
        converged = false;
    }

    Ok(StageResult { pose: theta, iterations, converged, correspondences_last: corr_last })
}

fn fine_gates(cfg: &LocalizationConfig) -> ClassMap<Option<f64>> {
    ClassMap::from_fn(|c| Some(*cfg.gates.get(c)))
}

fn coarse_gates(cfg: &LocalizationConfig) -> ClassMap<Option<f64>> {
    let mut g = ClassMap::from_fn(|_| None);
    *g.get_mut(SemanticClass::RoadBoundary) = Some(cfg.coarse_gate);
    g
}

/// Two-stage localization of a frame against the global map.
///
/// Stage one aligns road-boundary geometry under the relaxed coarse gate;
/// stage two refines over all classes with the per-class fine gates,
/// starting from the stage-one pose. When the boundary class is unusable the
/// coarse stage is skipped and refinement starts from `theta0`.
pub fn localize(
    frame: &FrameObservation,
    map: &GlobalVectorMap,
    theta0: &Pose2D,
    cfg: &LocalizationConfig,
) -> Result<LocalizationResult, LocalizationError> {
    let sets = SampledClassSets::build(frame, map, cfg);
    localize_sets(&sets, theta0, cfg)
}

/// As [`localize`], over presampled sets (lets callers reuse the sampling
/// across perturbations).
pub fn localize_sets(
    sets: &SampledClassSets,
    theta0: &Pose2D,
    cfg: &LocalizationConfig,
) -> Result<LocalizationResult, LocalizationError> {
    if sets.total_frame_points() < cfg.min_points {
        return Err(LocalizationError::InsufficientInput(format!(
            "frame has {} sampled points, need at least {}",
            sets.total_frame_points(),
            cfg.min_points
        )));
    }

    let boundary_usable = sets.class_usable(SemanticClass::RoadBoundary, cfg.min_points);
    let (theta1, iters1) = if boundary_usable && cfg.coarse_iters > 0 {
        let stage = icp_solve(sets, theta0, &coarse_gates(cfg), cfg.coarse_iters, cfg)?;
        (stage.pose, stage.iterations)
    } else {
        (*theta0, 0)
    };

    let stage2 = icp_solve(sets, &theta1, &fine_gates(cfg), cfg.fine_iters, cfg)?;
    let final_objective = objective(sets, &stage2.pose, &fine_gates(cfg), cfg);

    Ok(LocalizationResult {
        pose: stage2.pose,
        iterations_used: [iters1, stage2.iterations],
        final_objective,
        converged: stage2.converged,
        correspondences_last: stage2.correspondences_last,
    })
}

#[cfg(test)]
mod tests;
