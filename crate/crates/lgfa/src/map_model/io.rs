//! JSON interchange: frame files, map files, object files.
//!
//! All writers produce canonical pretty-printed JSON with a trailing newline;
//! numbers are emitted as shortest round-trip decimals, so write-then-read is
//! lossless for finite doubles and read-then-write reproduces a written file
//! byte for byte.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{FrameObjects, FrameObservation, FramePolyline, GlobalPolyline, GlobalVectorMap, ObjectBox, Pose2D};
use crate::fusion::FusionConfig;
use crate::geom::{ClassMap, Point2, Polyline, SemanticClass};

#[derive(Error, Debug)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: schema error{}: {message}", context(.frame, .element))]
    Schema {
        path: String,
        frame: Option<u64>,
        element: Option<usize>,
        message: String,
    },
    #[error("{path}: geometry error{}: {message}", context(.frame, .element))]
    Geometry {
        path: String,
        frame: Option<u64>,
        element: Option<usize>,
        message: String,
    },
}

fn context(frame: &Option<u64>, element: &Option<usize>) -> String {
    match (frame, element) {
        (Some(f), Some(e)) => format!(" (frame {f}, element {e})"),
        (Some(f), None) => format!(" (frame {f})"),
        (None, Some(e)) => format!(" (element {e})"),
        (None, None) => String::new(),
    }
}

/// A scene's frame stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub scene: String,
    pub frames: Vec<FrameObservation>,
}

// --- raw DTOs -------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct FrameFileDto {
    scene: String,
    frames: Vec<FrameDto>,
}

#[derive(Serialize, Deserialize)]
struct FrameDto {
    t: u64,
    ego_pose: Vec<f64>,
    polylines: Vec<FramePolylineDto>,
}

#[derive(Serialize, Deserialize)]
struct FramePolylineDto {
    class: String,
    id: Option<u64>,
    pts: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct MapFileDto {
    scene: String,
    config: FusionConfig,
    elements: Vec<MapElementDto>,
}

#[derive(Serialize, Deserialize)]
struct MapElementDto {
    class: String,
    gid: u64,
    pts: Vec<[f64; 2]>,
    frames: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    src_ids: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct FrameObjectsDto {
    t: u64,
    boxes: Vec<ObjectBoxDto>,
}

#[derive(Serialize, Deserialize)]
struct ObjectBoxDto {
    cx: f64,
    cy: f64,
    yaw: f64,
    l: f64,
    w: f64,
    label: String,
}

// --- helpers ---------------------------------------------------------------

fn read_to_string(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::Io { path: path.display().to_string(), source: e })
}

fn write_string(path: &Path, data: &str) -> Result<(), IoError> {
    fs::write(path, data).map_err(|e| IoError::Io { path: path.display().to_string(), source: e })
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, raw: &str) -> Result<T, IoError> {
    serde_json::from_str(raw).map_err(|e| IoError::Schema {
        path: path.display().to_string(),
        frame: None,
        element: None,
        message: e.to_string(),
    })
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialization cannot fail");
    s.push('\n');
    s
}

fn parse_class(
    path: &Path,
    frame: Option<u64>,
    element: usize,
    raw: &str,
) -> Result<SemanticClass, IoError> {
    SemanticClass::parse(raw).ok_or_else(|| IoError::Schema {
        path: path.display().to_string(),
        frame,
        element: Some(element),
        message: format!("unknown class string {raw:?}"),
    })
}

fn parse_polyline(
    path: &Path,
    frame: Option<u64>,
    element: usize,
    class: SemanticClass,
    pts: &[[f64; 2]],
) -> Result<Polyline, IoError> {
    let vertices: Vec<Point2> = pts.iter().map(|p| Point2::new(p[0], p[1])).collect();
    Polyline::new(class, vertices).map_err(|e| IoError::Geometry {
        path: path.display().to_string(),
        frame,
        element: Some(element),
        message: e.to_string(),
    })
}

fn pose_from_triple(path: &Path, frame: u64, v: &[f64]) -> Result<Pose2D, IoError> {
    if v.len() != 3 || v.iter().any(|x| !x.is_finite()) {
        return Err(IoError::Schema {
            path: path.display().to_string(),
            frame: Some(frame),
            element: None,
            message: format!("ego_pose must be three finite numbers, got {v:?}"),
        });
    }
    Ok(Pose2D::new(v[0], v[1], v[2]))
}

// --- frames ----------------------------------------------------------------

pub fn read_frames(path: impl AsRef<Path>) -> Result<FrameSet, IoError> {
    let path = path.as_ref();
    let dto: FrameFileDto = parse_json(path, &read_to_string(path)?)?;
    let mut frames = Vec::with_capacity(dto.frames.len());
    let mut last_index: Option<u64> = None;
    for f in &dto.frames {
        if let Some(prev) = last_index {
            if f.t <= prev {
                return Err(IoError::Schema {
                    path: path.display().to_string(),
                    frame: Some(f.t),
                    element: None,
                    message: format!("frame index not strictly increasing (previous {prev})"),
                });
            }
        }
        last_index = Some(f.t);
        let ego_pose_ref = pose_from_triple(path, f.t, &f.ego_pose)?;
        let mut polylines: ClassMap<Vec<FramePolyline>> = ClassMap::default();
        for (i, p) in f.polylines.iter().enumerate() {
            let class = parse_class(path, Some(f.t), i, &p.class)?;
            let geometry = parse_polyline(path, Some(f.t), i, class, &p.pts)?;
            polylines.get_mut(class).push(FramePolyline { geometry, persistent_id: p.id });
        }
        frames.push(FrameObservation { frame_index: f.t, ego_pose_ref, polylines });
    }
    Ok(FrameSet { scene: dto.scene, frames })
}

pub fn write_frames(path: impl AsRef<Path>, set: &FrameSet) -> Result<(), IoError> {
    let dto = FrameFileDto {
        scene: set.scene.clone(),
        frames: set
            .frames
            .iter()
            .map(|f| FrameDto {
                t: f.frame_index,
                ego_pose: vec![f.ego_pose_ref.tx, f.ego_pose_ref.ty, f.ego_pose_ref.phi],
                polylines: SemanticClass::ALL
                    .iter()
                    .flat_map(|&c| f.polylines.get(c).iter().map(move |p| (c, p)))
                    .map(|(c, p)| FramePolylineDto {
                        class: c.name().to_string(),
                        id: p.persistent_id,
                        pts: p.geometry.vertices().iter().map(|v| [v.x, v.y]).collect(),
                    })
                    .collect(),
            })
            .collect(),
    };
    write_string(path.as_ref(), &to_pretty_json(&dto))
}

// --- maps --------------------------------------------------------------------

pub fn read_map(path: impl AsRef<Path>) -> Result<GlobalVectorMap, IoError> {
    let path = path.as_ref();
    let dto: MapFileDto = parse_json(path, &read_to_string(path)?)?;
    let mut map = GlobalVectorMap::empty(dto.scene, dto.config);
    for (i, e) in dto.elements.iter().enumerate() {
        let class = parse_class(path, None, i, &e.class)?;
        let geometry = parse_polyline(path, None, i, class, &e.pts)?;
        let elems = map.classes.get_mut(class);
        if elems.iter().any(|g| g.global_id == e.gid) {
            return Err(IoError::Schema {
                path: path.display().to_string(),
                frame: None,
                element: Some(i),
                message: format!("duplicate global id {} within class {}", e.gid, class.name()),
            });
        }
        elems.push(GlobalPolyline {
            global_id: e.gid,
            geometry,
            support_frames: e.frames.iter().copied().collect::<BTreeSet<u64>>(),
            source_ids: e.src_ids.iter().copied().collect::<BTreeSet<u64>>(),
        });
    }
    Ok(map)
}

pub fn write_map(path: impl AsRef<Path>, map: &GlobalVectorMap) -> Result<(), IoError> {
    let dto = MapFileDto {
        scene: map.scene.clone(),
        config: map.config.clone(),
        elements: SemanticClass::ALL
            .iter()
            .flat_map(|&c| map.elements(c).iter().map(move |g| (c, g)))
            .map(|(c, g)| MapElementDto {
                class: c.name().to_string(),
                gid: g.global_id,
                pts: g.geometry.vertices().iter().map(|v| [v.x, v.y]).collect(),
                frames: g.support_frames.iter().copied().collect(),
                src_ids: g.source_ids.iter().copied().collect(),
            })
            .collect(),
    };
    write_string(path.as_ref(), &to_pretty_json(&dto))
}

// --- objects -----------------------------------------------------------------

pub fn read_objects(path: impl AsRef<Path>) -> Result<Vec<FrameObjects>, IoError> {
    let path = path.as_ref();
    let dtos: Vec<FrameObjectsDto> = parse_json(path, &read_to_string(path)?)?;
    let mut out = Vec::with_capacity(dtos.len());
    for d in dtos {
        let mut boxes = Vec::with_capacity(d.boxes.len());
        for (i, b) in d.boxes.iter().enumerate() {
            if !(b.l > 0.0 && b.w > 0.0) {
                return Err(IoError::Geometry {
                    path: path.display().to_string(),
                    frame: Some(d.t),
                    element: Some(i),
                    message: format!("box extents must be positive, got l={} w={}", b.l, b.w),
                });
            }
            boxes.push(ObjectBox {
                center: Point2::new(b.cx, b.cy),
                yaw: b.yaw,
                length: b.l,
                width: b.w,
                label: b.label.clone(),
            });
        }
        out.push(FrameObjects { frame_index: d.t, boxes });
    }
    Ok(out)
}

pub fn write_objects(path: impl AsRef<Path>, objects: &[FrameObjects]) -> Result<(), IoError> {
    let dtos: Vec<FrameObjectsDto> = objects
        .iter()
        .map(|o| FrameObjectsDto {
            t: o.frame_index,
            boxes: o
                .boxes
                .iter()
                .map(|b| ObjectBoxDto {
                    cx: b.center.x,
                    cy: b.center.y,
                    yaw: b.yaw,
                    l: b.length,
                    w: b.width,
                    label: b.label.clone(),
                })
                .collect(),
        })
        .collect();
    write_string(path.as_ref(), &to_pretty_json(&dtos))
}
