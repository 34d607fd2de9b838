//! Deterministic synthetic scenes: ground-truth vector maps, simulated frame
//! observations, and the fixed perturbation protocol used by the benchmark.

pub mod rng;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::FusionConfig;
use crate::geom::{densify, ClassMap, Point2, Polyline, SemanticClass};
use crate::map_model::io::FrameSet;
use crate::map_model::{FrameObservation, FramePolyline, GlobalPolyline, GlobalVectorMap, Pose2D};
use rng::Rng64;

#[derive(Error, Debug)]
pub enum ScenarioError {
    #[error("invalid scenario spec: {0}")]
    Spec(String),
}

/// Road layout template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadTemplate {
    Straight,
    Curve { radius: f64 },
    Intersection,
}

/// Full description of a synthetic scene and its observation model.
/// The seed determines every random draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub template: RoadTemplate,
    pub length: f64,
    pub lane_count: usize,
    pub lane_width: f64,
    /// Arc-length stations of pedestrian crossings along the centerline.
    pub crossings: Vec<f64>,
    pub frame_count: usize,
    pub frame_spacing: f64,
    pub fov_range: f64,
    /// Per-vertex Gaussian observation noise, meters.
    pub obs_noise: f64,
    /// Probability that a visible polyline is dropped from a frame.
    pub dropout_rate: f64,
    /// Probability that a surviving polyline is split in two with a gap.
    pub fragment_rate: f64,
    /// Lateral ego wander amplitude; zero keeps the ego on the centerline.
    pub wander_amplitude: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            template: RoadTemplate::Straight,
            length: 100.0,
            lane_count: 2,
            lane_width: 3.5,
            crossings: vec![30.0, 70.0],
            frame_count: 20,
            frame_spacing: 5.0,
            fov_range: 34.9,
            obs_noise: 0.0,
            dropout_rate: 0.0,
            fragment_rate: 0.0,
            wander_amplitude: 0.0,
        }
    }
}

impl ScenarioSpec {
    fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.length > 0.0) {
            return Err(ScenarioError::Spec("length must be positive".into()));
        }
        if self.lane_count < 1 {
            return Err(ScenarioError::Spec("lane_count must be at least 1".into()));
        }
        if !(self.lane_width > 0.0) {
            return Err(ScenarioError::Spec("lane_width must be positive".into()));
        }
        if !(self.fov_range > 0.0) || !(self.frame_spacing > 0.0) {
            return Err(ScenarioError::Spec("fov_range and frame_spacing must be positive".into()));
        }
        for &r in &[self.dropout_rate, self.fragment_rate] {
            if !(0.0..=1.0).contains(&r) {
                return Err(ScenarioError::Spec(format!("rate {r} outside [0, 1]")));
            }
        }
        if self.obs_noise < 0.0 {
            return Err(ScenarioError::Spec("obs_noise must be non-negative".into()));
        }
        for &s in &self.crossings {
            if !(0.0 < s && s < self.length) {
                return Err(ScenarioError::Spec(format!(
                    "crossing station {s} outside the road (length {})",
                    self.length
                )));
            }
        }
        if let RoadTemplate::Curve { radius } = self.template {
            if !(radius > 0.0) {
                return Err(ScenarioError::Spec("curve radius must be positive".into()));
            }
        }
        let last = (self.frame_count.saturating_sub(1)) as f64 * self.frame_spacing;
        if last > self.length {
            return Err(ScenarioError::Spec(format!(
                "ego path ({last} m) exceeds the road length ({} m)",
                self.length
            )));
        }
        Ok(())
    }

    pub fn scene_name(&self) -> String {
        let t = match self.template {
            RoadTemplate::Straight => "straight".to_string(),
            RoadTemplate::Curve { radius } => format!("curve{radius}"),
            RoadTemplate::Intersection => "intersection".to_string(),
        };
        format!("scenario-{t}-seed{}", self.seed)
    }

    /// Centerline point at arc-length station `s`.
    pub fn centerline_point(&self, s: f64) -> Point2 {
        match self.template {
            RoadTemplate::Straight | RoadTemplate::Intersection => Point2::new(s, 0.0),
            RoadTemplate::Curve { radius } => {
                let a = s / radius;
                Point2::new(radius * a.sin(), radius * (1.0 - a.cos()))
            }
        }
    }

    /// Centerline heading at station `s`.
    pub fn centerline_heading(&self, s: f64) -> f64 {
        match self.template {
            RoadTemplate::Straight | RoadTemplate::Intersection => 0.0,
            RoadTemplate::Curve { radius } => s / radius,
        }
    }

    /// Left unit normal of the centerline at station `s`.
    fn centerline_normal(&self, s: f64) -> Point2 {
        let h = self.centerline_heading(s);
        Point2::new(-h.sin(), h.cos())
    }

    /// True ego pose at station `s` (ego frame to global frame).
    pub fn ego_pose(&self, s: f64) -> Pose2D {
        let lateral = if self.wander_amplitude != 0.0 {
            self.wander_amplitude * (2.0 * std::f64::consts::PI * s / 50.0).sin()
        } else {
            0.0
        };
        let c = self.centerline_point(s);
        let n = self.centerline_normal(s);
        Pose2D::new(c.x + lateral * n.x, c.y + lateral * n.y, self.centerline_heading(s))
    }
}

/// A line at constant lateral offset from the centerline, over stations
/// `[s0, s1]`. Straight templates need only the two endpoints; curves are
/// sampled finely enough that chord error is far below map tolerances.
fn offset_line(spec: &ScenarioSpec, offset: f64, s0: f64, s1: f64) -> Vec<Point2> {
    let straight = matches!(spec.template, RoadTemplate::Straight | RoadTemplate::Intersection);
    let point = |s: f64| {
        let c = spec.centerline_point(s);
        let n = spec.centerline_normal(s);
        Point2::new(c.x + offset * n.x, c.y + offset * n.y)
    };
    if straight {
        return vec![point(s0), point(s1)];
    }
    let n = ((s1 - s0) / 0.5).ceil().max(1.0) as usize;
    (0..=n).map(|i| point(s0 + (s1 - s0) * i as f64 / n as f64)).collect()
}

/// Lateral offsets of dividers (interior lane edges) and boundaries (road
/// edges) for the configured lane layout.
fn lane_offsets(spec: &ScenarioSpec) -> (Vec<f64>, [f64; 2]) {
    let w = spec.lane_count as f64 * spec.lane_width;
    let dividers =
        (1..spec.lane_count).map(|k| -w / 2.0 + k as f64 * spec.lane_width).collect();
    (dividers, [w / 2.0, -w / 2.0])
}

/// Builds the ground-truth global vector map for a scenario.
pub fn generate_gt(spec: &ScenarioSpec) -> Result<GlobalVectorMap, ScenarioError> {
    spec.validate()?;
    let mut map = GlobalVectorMap::empty(spec.scene_name(), FusionConfig::default());
    let mut next_gid: ClassMap<u64> = ClassMap::default();
    let push = |map: &mut GlobalVectorMap,
                    next: &mut ClassMap<u64>,
                    class: SemanticClass,
                    pts: Vec<Point2>| {
        let gid = *next.get(class);
        *next.get_mut(class) += 1;
        let geometry = Polyline::dedup(class, pts).expect("generated geometry is valid");
        map.classes.get_mut(class).push(GlobalPolyline {
            global_id: gid,
            geometry,
            support_frames: BTreeSet::new(),
            source_ids: BTreeSet::from([gid]),
        });
    };

    let (dividers, boundaries) = lane_offsets(spec);
    let half_w = spec.lane_count as f64 * spec.lane_width / 2.0;

    match spec.template {
        RoadTemplate::Straight | RoadTemplate::Curve { .. } => {
            for off in boundaries {
                let pts = offset_line(spec, off, 0.0, spec.length);
                push(&mut map, &mut next_gid, SemanticClass::RoadBoundary, pts);
            }
            for off in dividers {
                let pts = offset_line(spec, off, 0.0, spec.length);
                push(&mut map, &mut next_gid, SemanticClass::LaneDivider, pts);
            }
        }
        RoadTemplate::Intersection => {
            // Cross road of the same lane layout, centered on the main road.
            let cx = spec.length / 2.0;
            let arm = half_w + 8.0;
            for off in boundaries {
                // Main-road boundaries, broken across the junction.
                push(
                    &mut map,
                    &mut next_gid,
                    SemanticClass::RoadBoundary,
                    vec![Point2::new(0.0, off), Point2::new(cx - half_w, off)],
                );
                push(
                    &mut map,
                    &mut next_gid,
                    SemanticClass::RoadBoundary,
                    vec![Point2::new(cx + half_w, off), Point2::new(spec.length, off)],
                );
                // Cross-road boundaries, broken likewise.
                push(
                    &mut map,
                    &mut next_gid,
                    SemanticClass::RoadBoundary,
                    vec![Point2::new(cx + off, -arm), Point2::new(cx + off, -half_w)],
                );
                push(
                    &mut map,
                    &mut next_gid,
                    SemanticClass::RoadBoundary,
                    vec![Point2::new(cx + off, half_w), Point2::new(cx + off, arm)],
                );
            }
            for off in dividers {
                push(
                    &mut map,
                    &mut next_gid,
                    SemanticClass::LaneDivider,
                    vec![Point2::new(0.0, off), Point2::new(spec.length, off)],
                );
                push(
                    &mut map,
                    &mut next_gid,
                    SemanticClass::LaneDivider,
                    vec![Point2::new(cx + off, -arm), Point2::new(cx + off, arm)],
                );
            }
        }
    }

    for &s in &spec.crossings {
        let c = spec.centerline_point(s);
        let n = spec.centerline_normal(s);
        let pts = vec![
            Point2::new(c.x - 2.0 * n.x, c.y - 2.0 * n.y),
            Point2::new(c.x + 2.0 * n.x, c.y + 2.0 * n.y),
        ];
        push(&mut map, &mut next_gid, SemanticClass::PedCrossing, pts);
    }

    Ok(map)
}

/// Clips a polyline to the open disk of radius `r` around `center`; returns
/// the connected pieces, each with exact circle-intersection endpoints.
pub fn clip_to_disk(poly: &Polyline, center: Point2, r: f64) -> Vec<Polyline> {
    let mut runs: Vec<Vec<Point2>> = Vec::new();
    let mut cur: Vec<Point2> = Vec::new();
    let push_pt = |cur: &mut Vec<Point2>, p: Point2| {
        if cur.last().map_or(true, |q| q.dist(&p) > crate::geom::MIN_VERTEX_SEP) {
            cur.push(p);
        }
    };
    for w in poly.vertices().windows(2) {
        let (p, q) = (w[0], w[1]);
        let dx = q.x - p.x;
        let dy = q.y - p.y;
        let fx = p.x - center.x;
        let fy = p.y - center.y;
        let a = dx * dx + dy * dy;
        let b = 2.0 * (fx * dx + fy * dy);
        let c = fx * fx + fy * fy - r * r;
        let disc = b * b - 4.0 * a * c;
        let (lo, hi) = if disc <= 0.0 {
            if c <= 0.0 {
                (0.0, 1.0) // inside throughout (tangent or contained)
            } else {
                (1.0, 0.0) // outside throughout
            }
        } else {
            let sq = disc.sqrt();
            let t0 = (-b - sq) / (2.0 * a);
            let t1 = (-b + sq) / (2.0 * a);
            (t0.max(0.0), t1.min(1.0))
        };
        if lo >= hi {
            if !cur.is_empty() {
                runs.push(std::mem::take(&mut cur));
            }
            continue;
        }
        if lo > 0.0 && !cur.is_empty() {
            runs.push(std::mem::take(&mut cur));
        }
        push_pt(&mut cur, p.lerp(&q, lo));
        push_pt(&mut cur, p.lerp(&q, hi));
        if hi < 1.0 {
            runs.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        runs.push(cur);
    }
    runs.into_iter().filter_map(|pts| Polyline::dedup(poly.class_id(), pts).ok()).collect()
}

/// Simulates frame observations along the ego path.
///
/// Per frame: ground-truth elements are clipped to the field-of-view disk,
/// each piece is densified to one-meter vertex spacing and moved into the
/// ego frame, per-vertex Gaussian noise is applied, whole pieces drop out
/// with `dropout_rate`, and survivors split in two with `fragment_rate`
/// (gap uniform in 1 to 5 meters). Persistent IDs carry the ground-truth
/// global ids; the ego-pose reference is the true pose.
pub fn simulate_frames(
    gt: &GlobalVectorMap,
    spec: &ScenarioSpec,
) -> Result<FrameSet, ScenarioError> {
    spec.validate()?;
    let mut rng = Rng64::seed_from(spec.seed);
    let mut frames = Vec::with_capacity(spec.frame_count);

    for t in 0..spec.frame_count {
        let s = t as f64 * spec.frame_spacing;
        let pose = spec.ego_pose(s);
        let to_ego = pose.inverse();
        let mut polylines: ClassMap<Vec<FramePolyline>> = ClassMap::default();

        for class in SemanticClass::ALL {
            for elem in gt.elements(class) {
                let pieces =
                    clip_to_disk(&elem.geometry, Point2::new(pose.tx, pose.ty), spec.fov_range);
                for piece in pieces {
                    let dense = densify(&piece, 1.0);
                    let ego_piece = Polyline::dedup(
                        class,
                        dense.iter().map(|&p| to_ego.apply(p)).collect(),
                    )
                    .expect("rigid transform preserves validity");

                    let noisy = if spec.obs_noise > 0.0 {
                        let pts: Vec<Point2> = ego_piece
                            .vertices()
                            .iter()
                            .map(|p| {
                                Point2::new(
                                    p.x + spec.obs_noise * rng.normal(),
                                    p.y + spec.obs_noise * rng.normal(),
                                )
                            })
                            .collect();
                        match Polyline::dedup(class, pts) {
                            Ok(p) => p,
                            Err(_) => continue,
                        }
                    } else {
                        ego_piece
                    };

                    if spec.dropout_rate > 0.0 && rng.next_f64() < spec.dropout_rate {
                        continue;
                    }

                    let mut outputs: Vec<Polyline> = Vec::new();
                    let len = crate::geom::arc_length(&noisy);
                    if spec.fragment_rate > 0.0
                        && rng.next_f64() < spec.fragment_rate
                        && len > 6.0
                    {
                        let gap = rng.uniform(1.0, 5.0).min(len - 1.0);
                        let center = rng.uniform(gap / 2.0 + 0.5, len - gap / 2.0 - 0.5);
                        if let Some(a) = noisy.sub_polyline(0.0, center - gap / 2.0) {
                            outputs.push(a);
                        }
                        if let Some(b) = noisy.sub_polyline(center + gap / 2.0, len) {
                            outputs.push(b);
                        }
                    } else {
                        outputs.push(noisy);
                    }

                    for geometry in outputs {
                        polylines.get_mut(class).push(FramePolyline {
                            geometry,
                            persistent_id: Some(elem.global_id),
                        });
                    }
                }
            }
        }

        frames.push(FrameObservation { frame_index: t as u64, ego_pose_ref: pose, polylines });
    }

    Ok(FrameSet { scene: gt.scene.clone(), frames })
}

/// The deterministic perturbation set applied to initial poses.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationProtocol {
    pub sigma_xy: f64,
    pub sigma_theta_deg: f64,
    pub alpha: f64,
    pub poses: Vec<Pose2D>,
}

/// Eight deterministic perturbations at noise scale `alpha`: four axis
/// translations of magnitude `1.0 * alpha` meters with zero yaw, and four
/// diagonal translations of the same magnitude paired with yaw
/// `2.0 * alpha` degrees, signs `(+,+,+), (+,-,-), (-,+,+), (-,-,-)`.
pub fn perturbations(alpha: f64) -> Result<PerturbationProtocol, ScenarioError> {
    if !(1.0..=3.0).contains(&alpha) {
        return Err(ScenarioError::Spec(format!("alpha {alpha} outside [1, 3]")));
    }
    let m = 1.0 * alpha;
    let yaw = (2.0 * alpha).to_radians();
    let d = m / std::f64::consts::SQRT_2;
    let poses = vec![
        Pose2D::new(m, 0.0, 0.0),
        Pose2D::new(-m, 0.0, 0.0),
        Pose2D::new(0.0, m, 0.0),
        Pose2D::new(0.0, -m, 0.0),
        Pose2D::new(d, d, yaw),
        Pose2D::new(d, -d, -yaw),
        Pose2D::new(-d, d, yaw),
        Pose2D::new(-d, -d, -yaw),
    ];
    Ok(PerturbationProtocol { sigma_xy: 1.0, sigma_theta_deg: 2.0, alpha, poses })
}
