//! Map-quality and localization metrics, plus the two-level aggregation used
//! by the benchmark tables.

use thiserror::Error;

use crate::baselines::icp_trimmed;
use crate::geom::{directed_distance, resample, ClassMap, Point2, PointIndex, SemanticClass};
use crate::map_model::{GlobalVectorMap, Pose2D};

#[derive(Error, Debug)]
pub enum MetricError {
    #[error("empty aggregate")]
    EmptyAggregate,
    #[error("degenerate scale estimate: {0}")]
    DegenerateScale(String),
    #[error("insufficient correspondences for alignment")]
    InsufficientInput,
}

/// Pools every same-class sample of a map at step `delta`.
fn pooled_samples(map: &GlobalVectorMap, class: SemanticClass, delta: f64) -> Vec<Point2> {
    map.elements(class).iter().flat_map(|e| resample(&e.geometry, delta)).collect()
}

fn pooled_all(map: &GlobalVectorMap, delta: f64) -> Vec<Point2> {
    SemanticClass::ALL.iter().flat_map(|&c| pooled_samples(map, c, delta)).collect()
}

/// Geometry-true anchor points of a map class: polyline vertices plus
/// segment midpoints. Unlike arc-length resampling (which requantizes
/// spacing and so hides scale along a line), these points scale with the
/// geometry and carry the scale signal.
fn anchor_points(map: &GlobalVectorMap, class: SemanticClass) -> Vec<Point2> {
    let mut out = Vec::new();
    for e in map.elements(class) {
        let verts = e.geometry.vertices();
        out.extend_from_slice(verts);
        for w in verts.windows(2) {
            out.push(w[0].lerp(&w[1], 0.5));
        }
    }
    out
}

/// Symmetric Chamfer distance between the same-class sample pools of two
/// maps. Classes missing from either side yield `None` and are excluded
/// from aggregation.
pub fn chamfer_map(
    pred: &GlobalVectorMap,
    gt: &GlobalVectorMap,
    delta: f64,
) -> ClassMap<Option<f64>> {
    ClassMap::from_fn(|class| {
        let p = pooled_samples(pred, class, delta);
        let g = pooled_samples(gt, class, delta);
        if p.is_empty() || g.is_empty() {
            return None;
        }
        let fwd = directed_distance(&p, &g).expect("non-empty");
        let bwd = directed_distance(&g, &p).expect("non-empty");
        Some(0.5 * (fwd + bwd))
    })
}

/// Mutual nearest-neighbor pairs within `gate` between two point sets.
fn mutual_nn_pairs(a: &[Point2], b: &[Point2], gate: f64) -> Vec<(Point2, Point2)> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let ia = PointIndex::build(a, 0.5);
    let ib = PointIndex::build(b, 0.5);
    let mut out = Vec::new();
    for (i, p) in a.iter().enumerate() {
        let (j, d) = ib.nearest(p);
        if d <= gate && ia.nearest(&b[j]).0 == i {
            out.push((*p, b[j]));
        }
    }
    out
}

/// Scale factor and per-class scale errors after rigid alignment.
pub struct ScaleEstimate {
    /// Rigid pose that aligns the prediction to the reference.
    pub alignment: Pose2D,
    /// `|1 - s| * 100` per class, where `s` fits reference extents to the
    /// aligned prediction over mutual nearest-neighbor pairs.
    pub per_class: ClassMap<Option<f64>>,
}

/// Gate for mutual-NN scale pairs, meters.
const SCALE_PAIR_GATE: f64 = 1.0;

/// Rigid-aligns `pred` to `gt` (class-blind trimmed ICP over `delta`-sampled
/// pools), then estimates the scale factor per class by least squares over
/// centered mutual-NN pairs of geometry anchor points:
/// `s = sum(x' . y') / sum(x' . x')` with `x` the reference side.
pub fn scale_error(
    pred: &GlobalVectorMap,
    gt: &GlobalVectorMap,
    delta: f64,
) -> Result<ScaleEstimate, MetricError> {
    let pred_pool = pooled_all(pred, delta);
    let gt_pool = pooled_all(gt, delta);
    if pred_pool.len() < 3 || gt_pool.len() < 3 {
        return Err(MetricError::InsufficientInput);
    }
    let alignment = icp_trimmed(&pred_pool, &gt_pool, &Pose2D::identity(), 20, 2.0, 0.7)
        .map_err(|_| MetricError::InsufficientInput)?;

    let per_class = ClassMap::from_fn(|class| {
        let p: Vec<Point2> =
            anchor_points(pred, class).iter().map(|&q| alignment.apply(q)).collect();
        let g = anchor_points(gt, class);
        let pairs = mutual_nn_pairs(&g, &p, SCALE_PAIR_GATE);
        if pairs.len() < 3 {
            return None;
        }
        let n = pairs.len() as f64;
        let mx = Point2::new(
            pairs.iter().map(|(x, _)| x.x).sum::<f64>() / n,
            pairs.iter().map(|(x, _)| x.y).sum::<f64>() / n,
        );
        let my = Point2::new(
            pairs.iter().map(|(_, y)| y.x).sum::<f64>() / n,
            pairs.iter().map(|(_, y)| y.y).sum::<f64>() / n,
        );
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, y) in &pairs {
            let xc = Point2::new(x.x - mx.x, x.y - mx.y);
            let yc = Point2::new(y.x - my.x, y.y - my.y);
            num += xc.x * yc.x + xc.y * yc.y;
            den += xc.x * xc.x + xc.y * xc.y;
        }
        if den <= 1e-12 {
            return None;
        }
        Some((1.0 - num / den).abs() * 100.0)
    });

    if SemanticClass::ALL.iter().all(|&c| per_class.get(c).is_none()) {
        return Err(MetricError::DegenerateScale(
            "correspondences collapse in every class".into(),
        ));
    }
    Ok(ScaleEstimate { alignment, per_class })
}

/// Translation error (meters) and heading error (degrees) of an estimated
/// pose against the true pose: the relative pose `est^-1 * true`.
pub fn pose_errors(estimated: &Pose2D, truth: &Pose2D) -> (f64, f64) {
    let rel = estimated.inverse().compose(truth);
    (rel.tx.hypot(rel.ty), rel.phi.abs().to_degrees())
}

/// Nearest-rank percentile (no interpolation). `q` in `[0, 1]`.
pub fn percentile_nearest_rank(samples: &[f64], q: f64) -> Result<f64, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::EmptyAggregate);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

pub fn mean(samples: &[f64]) -> Result<f64, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::EmptyAggregate);
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

/// Mean / median / 90th-percentile summary of a sample set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
}

pub fn summarize(samples: &[f64]) -> Result<Summary, MetricError> {
    Ok(Summary {
        n: samples.len(),
        mean: mean(samples)?,
        median: percentile_nearest_rank(samples, 0.5)?,
        p90: percentile_nearest_rank(samples, 0.9)?,
    })
}

/// The benchmark's two-level nesting: mean over the perturbations of each
/// frame first, then mean over frames. Inner slices must be non-empty.
pub fn nested_mean(per_frame_perturbations: &[Vec<f64>]) -> Result<f64, MetricError> {
    if per_frame_perturbations.is_empty() {
        return Err(MetricError::EmptyAggregate);
    }
    let frame_means: Vec<f64> = per_frame_perturbations
        .iter()
        .map(|v| mean(v))
        .collect::<Result<_, _>>()?;
    mean(&frame_means)
}

#[cfg(test)]
mod tests;
