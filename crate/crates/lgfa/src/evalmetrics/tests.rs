use super::*;
use crate::fusion::FusionConfig;
use crate::geom::Polyline;
use crate::map_model::GlobalPolyline;
use std::collections::BTreeSet;

fn line(class: SemanticClass, pts: &[(f64, f64)]) -> Polyline {
    Polyline::new(class, pts.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap()
}

/// A compact three-class map. Small extents keep constructed-scaling tests
/// free of nearest-neighbor sliding.
fn small_map() -> GlobalVectorMap {
    let mut map = GlobalVectorMap::empty("metrics", FusionConfig::default());
    let mut gid = 0u64;
    let mut push = |map: &mut GlobalVectorMap, p: Polyline| {
        let class = p.class_id();
        map.classes.get_mut(class).push(GlobalPolyline {
            global_id: gid,
            geometry: p,
            support_frames: BTreeSet::from([0]),
            source_ids: BTreeSet::new(),
        });
        gid += 1;
    };
    push(&mut map, line(SemanticClass::RoadBoundary, &[(-15.0, 3.5), (15.0, 3.5)]));
    push(&mut map, line(SemanticClass::RoadBoundary, &[(-15.0, -3.5), (15.0, -3.5)]));
    push(&mut map, line(SemanticClass::LaneDivider, &[(-15.0, 0.0), (15.0, 0.0)]));
    push(&mut map, line(SemanticClass::PedCrossing, &[(5.0, -2.0), (5.0, 2.0)]));
    map
}

fn scaled_about_centroid(map: &GlobalVectorMap, s: f64) -> GlobalVectorMap {
    let mut pts = Vec::new();
    for class in SemanticClass::ALL {
        for e in map.elements(class) {
            pts.extend_from_slice(e.geometry.vertices());
        }
    }
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let mut out = map.clone();
    for class in SemanticClass::ALL {
        for e in out.classes.get_mut(class) {
            e.geometry = e
                .geometry
                .map_vertices(|p| Point2::new(cx + s * (p.x - cx), cy + s * (p.y - cy)));
        }
    }
    out
}

#[test]
fn chamfer_zero_on_identical_maps() {
    let map = small_map();
    let c = chamfer_map(&map, &map, 0.2);
    for class in SemanticClass::ALL {
        assert_eq!(*c.get(class), Some(0.0));
    }
}

#[test]
fn chamfer_detects_lateral_shift() {
    // Shift every element perpendicular to its own direction, so nothing
    // slides along itself.
    let map = small_map();
    let mut shifted = map.clone();
    for class in SemanticClass::ALL {
        for e in shifted.classes.get_mut(class) {
            let a = e.geometry.first();
            let b = e.geometry.last();
            let len = a.dist(&b);
            let n = Point2::new(-(b.y - a.y) / len, (b.x - a.x) / len);
            e.geometry =
                e.geometry.map_vertices(|p| Point2::new(p.x + 0.3 * n.x, p.y + 0.3 * n.y));
        }
    }
    let c = chamfer_map(&shifted, &map, 0.2);
    for class in SemanticClass::ALL {
        let v = c.get(class).unwrap();
        assert!((v - 0.3).abs() <= 0.1, "class {class:?}: {v}");
    }
}

#[test]
fn chamfer_is_symmetric_and_skips_missing_classes() {
    let map = small_map();
    let mut partial = map.clone();
    partial.classes.get_mut(SemanticClass::PedCrossing).clear();
    let ab = chamfer_map(&partial, &map, 0.2);
    let ba = chamfer_map(&map, &partial, 0.2);
    for class in SemanticClass::ALL {
        assert_eq!(ab.get(class), ba.get(class));
    }
    assert!(ab.get(SemanticClass::PedCrossing).is_none());
}

#[test]
fn scale_error_zero_on_identity() {
    let map = small_map();
    let est = scale_error(&map, &map, 2.0).unwrap();
    for class in SemanticClass::ALL {
        if let Some(v) = est.per_class.get(class) {
            assert!(*v < 1e-9, "class {class:?}: {v}");
        }
    }
}

#[test]
fn scale_error_detects_constructed_scaling() {
    let map = small_map();
    for (s, expect) in [(1.02, 2.0), (0.97, 3.0)] {
        let scaled = scaled_about_centroid(&map, s);
        let est = scale_error(&scaled, &map, 2.0).unwrap();
        let divider = est.per_class.get(SemanticClass::LaneDivider).unwrap();
        assert!((divider - expect).abs() <= 0.05, "scale {s}: got {divider}, want {expect}");
    }
}

#[test]
fn scale_error_invariant_to_rigid_motion() {
    let map = small_map();
    let pose = crate::map_model::Pose2D::new(0.8, -0.6, 0.05);
    let mut moved = map.clone();
    for class in SemanticClass::ALL {
        for e in moved.classes.get_mut(class) {
            e.geometry = pose.apply_polyline(&e.geometry);
        }
    }
    let est = scale_error(&moved, &map, 2.0).unwrap();
    for class in SemanticClass::ALL {
        if let Some(v) = est.per_class.get(class) {
            assert!(*v <= 0.05, "class {class:?}: {v}");
        }
    }
}

#[test]
fn pose_error_examples() {
    let id = Pose2D::identity();
    assert_eq!(pose_errors(&id, &id), (0.0, 0.0));

    let truth = Pose2D::new(10.0, 5.0, 0.7);
    let est = truth.compose(&Pose2D::new(3.0, 4.0, 0.0));
    let (t, h) = pose_errors(&est, &truth);
    assert!((t - 5.0).abs() < 1e-9);
    assert!(h < 1e-9);

    // Heading error across the wrap stays at most 180 degrees.
    let a = Pose2D::new(0.0, 0.0, 3.1);
    let b = Pose2D::new(0.0, 0.0, -3.1);
    let (_, h) = pose_errors(&a, &b);
    assert!(h <= 180.0);
    assert!((h - (2.0 * std::f64::consts::PI - 6.2).to_degrees()).abs() < 1e-9);
}

#[test]
fn pose_errors_invariant_under_left_composition() {
    let g = Pose2D::new(4.0, -7.0, 1.3);
    let a = Pose2D::new(1.0, 2.0, 0.4);
    let b = Pose2D::new(0.5, 2.5, 0.3);
    let (t1, h1) = pose_errors(&a, &b);
    let (t2, h2) = pose_errors(&g.compose(&a), &g.compose(&b));
    assert!((t1 - t2).abs() < 1e-9);
    assert!((h1 - h2).abs() < 1e-9);
}

#[test]
fn percentile_nearest_rank_definition() {
    let samples: Vec<f64> = (1..=10).map(|i| i as f64).collect();
    assert_eq!(percentile_nearest_rank(&samples, 0.9).unwrap(), 9.0);
    assert_eq!(percentile_nearest_rank(&samples, 0.5).unwrap(), 5.0);
    assert_eq!(percentile_nearest_rank(&[7.5], 0.9).unwrap(), 7.5);
    assert!(percentile_nearest_rank(&[], 0.9).is_err());
}

#[test]
fn summary_of_single_sample_collapses() {
    let s = summarize(&[2.5]).unwrap();
    assert_eq!((s.mean, s.median, s.p90), (2.5, 2.5, 2.5));
}

#[test]
fn nested_mean_differs_from_pooled_mean() {
    // Unbalanced cells: nested [(0+0)/2, 3] -> 1.5; pooled (0+0+3)/3 = 1.
    let cells = vec![vec![0.0, 0.0], vec![3.0]];
    let nested = nested_mean(&cells).unwrap();
    assert_eq!(nested, 1.5);
    let pooled: f64 = cells.iter().flatten().sum::<f64>() / 3.0;
    assert_ne!(nested, pooled);
}
