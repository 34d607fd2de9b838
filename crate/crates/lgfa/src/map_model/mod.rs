//! Data model for frames, global maps, poses and augmented frames, plus the
//! JSON interchange formats.

pub mod io;

use serde::{Deserialize, Serialize};

use crate::fusion::FusionConfig;
use crate::geom::{ClassMap, Point2, Polyline, SemanticClass};

/// Wraps an angle to `(-pi, pi]`. Single canonical wrapping used everywhere.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// A planar rigid transform: rotation by `phi` (counterclockwise) followed by
/// translation `(tx, ty)`. `phi` is kept wrapped to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub tx: f64,
    pub ty: f64,
    pub phi: f64,
}

impl Pose2D {
    pub fn new(tx: f64, ty: f64, phi: f64) -> Self {
        Self { tx, ty, phi: wrap_angle(phi) }
    }

    pub fn identity() -> Self {
        Self { tx: 0.0, ty: 0.0, phi: 0.0 }
    }

    /// `R(phi) * p + t`.
    pub fn apply(&self, p: Point2) -> Point2 {
        let (s, c) = self.phi.sin_cos();
        Point2::new(c * p.x - s * p.y + self.tx, s * p.x + c * p.y + self.ty)
    }

    /// Composition such that `(a.compose(b)).apply(p) == a.apply(b.apply(p))`.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let (s, c) = self.phi.sin_cos();
        Pose2D::new(
            c * other.tx - s * other.ty + self.tx,
            s * other.tx + c * other.ty + self.ty,
            self.phi + other.phi,
        )
    }

    pub fn inverse(&self) -> Pose2D {
        let (s, c) = self.phi.sin_cos();
        // R(-phi) * (-t)
        Pose2D::new(-(c * self.tx + s * self.ty), -(-s * self.tx + c * self.ty), -self.phi)
    }

    pub fn apply_polyline(&self, poly: &Polyline) -> Polyline {
        poly.map_vertices(|p| self.apply(p))
    }
}

/// One predicted polyline of a frame, optionally carrying a persistent ID
/// that is stable across frames for the same physical element.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePolyline {
    pub geometry: Polyline,
    pub persistent_id: Option<u64>,
}

/// One frame's class-partitioned polylines plus the ego-pose reference
/// (ego frame to global frame).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub frame_index: u64,
    pub ego_pose_ref: Pose2D,
    pub polylines: ClassMap<Vec<FramePolyline>>,
}

impl FrameObservation {
    pub fn total_polylines(&self) -> usize {
        self.polylines.total_len()
    }
}

/// A scene-level polyline with merge bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPolyline {
    pub global_id: u64,
    pub geometry: Polyline,
    pub support_frames: std::collections::BTreeSet<u64>,
    pub source_ids: std::collections::BTreeSet<u64>,
}

/// The sparse global vector map: per-class lists of global polylines and the
/// configuration snapshot it was built with.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalVectorMap {
    pub scene: String,
    pub config: FusionConfig,
    pub classes: ClassMap<Vec<GlobalPolyline>>,
}

impl GlobalVectorMap {
    pub fn empty(scene: impl Into<String>, config: FusionConfig) -> Self {
        Self { scene: scene.into(), config, classes: ClassMap::default() }
    }

    pub fn elements(&self, class: SemanticClass) -> &[GlobalPolyline] {
        self.classes.get(class)
    }

    pub fn total_elements(&self) -> usize {
        self.classes.total_len()
    }

    pub fn polylines(&self, class: SemanticClass) -> Vec<Polyline> {
        self.elements(class).iter().map(|e| e.geometry.clone()).collect()
    }
}

/// An axis-aligned-in-yaw object box, in whatever frame the context states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectBox {
    pub center: Point2,
    pub yaw: f64,
    pub length: f64,
    pub width: f64,
    pub label: String,
}

impl ObjectBox {
    /// Corner points in counterclockwise order.
    pub fn corners(&self) -> [Point2; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = self.length / 2.0;
        let hw = self.width / 2.0;
        let rot = |x: f64, y: f64| {
            Point2::new(self.center.x + c * x - s * y, self.center.y + s * x + c * y)
        };
        [rot(hl, hw), rot(-hl, hw), rot(-hl, -hw), rot(hl, -hw)]
    }
}

/// Per-frame object detections in the ego frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObjects {
    pub frame_index: u64,
    pub boxes: Vec<ObjectBox>,
}
