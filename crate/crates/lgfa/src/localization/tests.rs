use super::*;
use crate::geom::Polyline;
use crate::scenario::rng::Rng64;

fn line(class: SemanticClass, pts: &[(f64, f64)]) -> Polyline {
    Polyline::new(class, pts.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap()
}

fn class_polys(entries: Vec<(SemanticClass, Polyline)>) -> ClassMap<Vec<Polyline>> {
    let mut out: ClassMap<Vec<Polyline>> = ClassMap::default();
    for (c, p) in entries {
        out.get_mut(c).push(p);
    }
    out
}

/// A two-class scene with enough points per class: two boundaries, one
/// divider, one transverse crossing-like divider companion.
fn test_sets(cfg: &LocalizationConfig) -> SampledClassSets {
    let map_polys = class_polys(vec![
        (SemanticClass::RoadBoundary, line(SemanticClass::RoadBoundary, &[(0.0, 3.5), (40.0, 3.5)])),
        (SemanticClass::RoadBoundary, line(SemanticClass::RoadBoundary, &[(0.0, -3.5), (40.0, -3.5)])),
        (SemanticClass::LaneDivider, line(SemanticClass::LaneDivider, &[(0.0, 0.0), (40.0, 0.0)])),
        (SemanticClass::PedCrossing, line(SemanticClass::PedCrossing, &[(15.0, -2.0), (15.0, 2.0)])),
    ]);
    SampledClassSets::from_polylines(&map_polys.clone(), &map_polys, cfg)
}

/// Exhaustive gated nearest-neighbor correspondence oracle, independent of
/// the grid indexes.
fn brute_corr(
    sets: &SampledClassSets,
    theta: &Pose2D,
    gates: &ClassMap<Option<f64>>,
    min_points: usize,
) -> Vec<Correspondence> {
    let mut out = Vec::new();
    for class in SemanticClass::ALL {
        let Some(gate) = *gates.get(class) else { continue };
        let xs = sets.xs.get(class);
        let ys = sets.ys.get(class);
        let segs = sets.segs.get(class);
        if xs.len() < min_points || ys.len() < min_points || segs.is_empty() {
            continue;
        }
        let transformed: Vec<Point2> = xs.iter().map(|&p| theta.apply(p)).collect();
        for (x, tx) in xs.iter().zip(transformed.iter()) {
            let mut best = (usize::MAX, f64::INFINITY);
            for (i, s) in segs.iter().enumerate() {
                let d = crate::geom::point_to_segment_distance(tx, s);
                if d < best.1 || (d == best.1 && i < best.0) {
                    best = (i, d);
                }
            }
            if best.1 <= gate {
                out.push(Correspondence {
                    kind: CorrKind::Forward,
                    class_id: class,
                    source: *x,
                    target: segs[best.0].closest_point(tx),
                    residual: best.1,
                    weight: 1.0,
                });
            }
        }
        for y in ys {
            let mut best = (usize::MAX, f64::INFINITY);
            for (i, tx) in transformed.iter().enumerate() {
                let d = tx.dist(y);
                if d < best.1 || (d == best.1 && i < best.0) {
                    best = (i, d);
                }
            }
            if best.1 <= gate {
                out.push(Correspondence {
                    kind: CorrKind::Backward,
                    class_id: class,
                    source: xs[best.0],
                    target: *y,
                    residual: best.1,
                    weight: 1.0,
                });
            }
        }
    }
    out
}

fn all_gates(cfg: &LocalizationConfig) -> ClassMap<Option<f64>> {
    ClassMap::from_fn(|c| Some(*cfg.gates.get(c)))
}

#[test]
fn build_corr_perfect_overlay_has_zero_residuals() {
    let cfg = LocalizationConfig { min_points: 5, ..LocalizationConfig::default() };
    let sets = test_sets(&cfg);
    let corrs = build_corr(&sets, &Pose2D::identity(), &all_gates(&cfg), cfg.min_points);
    assert!(!corrs.is_empty());
    for c in &corrs {
        assert!(c.residual < 1e-9);
    }
    let expected: usize = SemanticClass::ALL
        .iter()
        .map(|&c| sets.xs.get(c).len() + sets.ys.get(c).len())
        .sum();
    assert_eq!(corrs.len(), expected);
}

#[test]
fn build_corr_gates_out_far_classes() {
    let cfg = LocalizationConfig { min_points: 5, ..LocalizationConfig::default() };
    let sets = test_sets(&cfg);
    // 3 m along-road shift: transverse crossings land beyond their 1.5 m
    // gate (the longitudinal lines slide along themselves and stay gated in).
    let theta = Pose2D::new(3.0, 0.0, 0.0);
    let corrs = build_corr(&sets, &theta, &all_gates(&cfg), cfg.min_points);
    assert!(!corrs.is_empty());
    assert!(corrs.iter().all(|c| c.class_id != SemanticClass::PedCrossing));
}

#[test]
fn build_corr_matches_brute_force_exactly() {
    let mut rng = Rng64::seed_from(21);
    let cfg = LocalizationConfig { min_points: 5, ..LocalizationConfig::default() };
    for _ in 0..10 {
        let sets = test_sets(&cfg);
        let theta = Pose2D::new(
            rng.uniform(-0.6, 0.6),
            rng.uniform(-0.6, 0.6),
            rng.uniform(-0.03, 0.03),
        );
        let fast = build_corr(&sets, &theta, &all_gates(&cfg), cfg.min_points);
        let brute = brute_corr(&sets, &theta, &all_gates(&cfg), cfg.min_points);
        assert_eq!(fast, brute);
    }
}

#[test]
fn robust_weight_values() {
    let cfg = LocalizationConfig::default();
    assert_eq!(huber_irls(0.0, cfg.huber_delta), 1.0);
    assert_eq!(huber_irls(2.0 * cfg.huber_delta, cfg.huber_delta), 0.5);

    let mut corrs = vec![Correspondence {
        kind: CorrKind::Forward,
        class_id: SemanticClass::LaneDivider,
        source: Point2::new(0.0, 0.0),
        target: Point2::new(0.0, 0.0),
        residual: 0.3,
        weight: 0.0,
    }];
    let cfg_w = LocalizationConfig {
        class_weights: ClassMap { ped_crossing: 1.0, divider: 0.8, boundary: 1.0 },
        ..cfg
    };
    robust_weights(&mut corrs, &cfg_w);
    assert!((corrs[0].weight - 0.8).abs() < 1e-12);
}

#[test]
fn procrustes_recovers_generating_pose() {
    let truth = Pose2D::new(0.7, -1.1, (10.0f64).to_radians());
    let mut rng = Rng64::seed_from(2);
    let pairs: Vec<(Point2, Point2, f64)> = (0..40)
        .map(|_| {
            let x = Point2::new(rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0));
            (x, truth.apply(x), 1.0)
        })
        .collect();
    let fit = weighted_procrustes(&pairs).unwrap();
    assert!((fit.tx - truth.tx).abs() < 1e-9);
    assert!((fit.ty - truth.ty).abs() < 1e-9);
    assert!((fit.phi - truth.phi).abs() < 1e-9);
}

#[test]
fn procrustes_zero_weight_pairs_are_excluded() {
    let pairs = vec![
        (Point2::new(1.0, 2.0), Point2::new(4.0, 6.0), 1.0),
        (Point2::new(50.0, 50.0), Point2::new(-100.0, 3.0), 0.0),
    ];
    let fit = weighted_procrustes(&pairs).unwrap();
    assert_eq!(fit.phi, 0.0);
    assert!((fit.tx - 3.0).abs() < 1e-12);
    assert!((fit.ty - 4.0).abs() < 1e-12);
}

#[test]
fn procrustes_errors_without_weight() {
    assert!(weighted_procrustes(&[]).is_err());
    let pairs = vec![(Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), 0.0)];
    assert!(weighted_procrustes(&pairs).is_err());
}

#[test]
fn procrustes_beats_random_probes() {
    let mut rng = Rng64::seed_from(5);
    let truth = Pose2D::new(0.4, 0.9, 0.25);
    let pairs: Vec<(Point2, Point2, f64)> = (0..50)
        .map(|_| {
            let x = Point2::new(rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0));
            let y = truth.apply(x);
            let noisy = Point2::new(y.x + 0.05 * rng.normal(), y.y + 0.05 * rng.normal());
            (x, noisy, rng.uniform(0.1, 1.0))
        })
        .collect();
    let sse = |pose: &Pose2D| -> f64 {
        pairs
            .iter()
            .map(|(x, y, w)| {
                let p = pose.apply(*x);
                w * p.dist_sq(y)
            })
            .sum()
    };
    let fit = weighted_procrustes(&pairs).unwrap();
    let best = sse(&fit);
    for _ in 0..10_000 {
        let probe = Pose2D::new(
            fit.tx + rng.uniform(-0.5, 0.5),
            fit.ty + rng.uniform(-0.5, 0.5),
            fit.phi + rng.uniform(-0.2, 0.2),
        );
        assert!(sse(&probe) + 1e-12 >= best);
    }
}

#[test]
fn pose_diff_examples() {
    let a = Pose2D::new(0.0, 0.0, 0.0);
    assert_eq!(pose_diff(&a, &a, 5.0), 0.0);
    let b = Pose2D::new(3.0, 4.0, 0.0);
    assert_eq!(pose_diff(&a, &b, 5.0), 5.0);
    // Wrapped angle difference across the pi boundary.
    let c = Pose2D::new(0.0, 0.0, 3.1);
    let d = Pose2D::new(0.0, 0.0, -3.1);
    let expect = 2.0 * std::f64::consts::PI - 6.2;
    assert!((pose_diff(&c, &d, 1.0) - expect).abs() < 1e-12);
    assert!(pose_diff(&c, &d, 1.0) < 0.1);
}

#[test]
fn icp_converges_immediately_on_perfect_input() {
    let cfg = LocalizationConfig { min_points: 5, ..LocalizationConfig::default() };
    let sets = test_sets(&cfg);
    let result =
        icp_solve(&sets, &Pose2D::identity(), &all_gates(&cfg), cfg.fine_iters, &cfg).unwrap();
    assert!(result.converged);
    assert_eq!(result.iterations, 1);
    assert!(result.pose.tx.abs() < 1e-9 && result.pose.ty.abs() < 1e-9);
    assert!(result.pose.phi.abs() < 1e-12);
}

#[test]
fn icp_objective_never_increases_for_fixed_correspondences() {
    // Exact property of the closed form: the weighted SSE of the pairs fed
    // to the rigid fit is minimized by its output.
    let mut rng = Rng64::seed_from(6);
    let cfg = LocalizationConfig { min_points: 5, ..LocalizationConfig::default() };
    let sets = test_sets(&cfg);
    let theta = Pose2D::new(0.3, -0.2, 0.02);
    let mut corrs = build_corr(&sets, &theta, &all_gates(&cfg), cfg.min_points);
    robust_weights(&mut corrs, &cfg);
    let pairs: Vec<(Point2, Point2, f64)> =
        corrs.iter().map(|c| (c.source, c.target, c.weight)).collect();
    let sse = |pose: &Pose2D| -> f64 {
        pairs.iter().map(|(x, y, w)| w * pose.apply(*x).dist_sq(y)).sum()
    };
    let updated = weighted_procrustes(&pairs).unwrap();
    assert!(sse(&updated) <= sse(&theta) + 1e-12);
    // And against arbitrary other poses as well.
    for _ in 0..100 {
        let probe =
            Pose2D::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-0.1, 0.1));
        assert!(sse(&updated) <= sse(&probe) + 1e-12);
    }
}

fn observation_from(map_polys: &ClassMap<Vec<Polyline>>, pose: &Pose2D) -> FrameObservation {
    let inv = pose.inverse();
    let mut polylines: ClassMap<Vec<crate::map_model::FramePolyline>> = ClassMap::default();
    for class in SemanticClass::ALL {
        for p in map_polys.get(class) {
            polylines.get_mut(class).push(crate::map_model::FramePolyline {
                geometry: inv.apply_polyline(p),
                persistent_id: None,
            });
        }
    }
    FrameObservation { frame_index: 0, ego_pose_ref: *pose, polylines }
}

fn two_stage_scene() -> (ClassMap<Vec<Polyline>>, GlobalVectorMap) {
    let map_polys = class_polys(vec![
        (SemanticClass::RoadBoundary, line(SemanticClass::RoadBoundary, &[(0.0, 5.25), (60.0, 5.25)])),
        (SemanticClass::RoadBoundary, line(SemanticClass::RoadBoundary, &[(0.0, -5.25), (60.0, -5.25)])),
        (SemanticClass::LaneDivider, line(SemanticClass::LaneDivider, &[(0.0, -1.75), (60.0, -1.75)])),
        (SemanticClass::LaneDivider, line(SemanticClass::LaneDivider, &[(0.0, 1.75), (60.0, 1.75)])),
        (SemanticClass::LaneDivider, line(SemanticClass::LaneDivider, &[(0.0, 0.0), (60.0, 0.0)])),
        (SemanticClass::PedCrossing, line(SemanticClass::PedCrossing, &[(20.0, -2.0), (20.0, 2.0)])),
        (SemanticClass::PedCrossing, line(SemanticClass::PedCrossing, &[(45.0, -2.0), (45.0, 2.0)])),
    ]);
    let mut map =
        GlobalVectorMap::empty("loc-test", crate::fusion::FusionConfig::default());
    let mut gid: u64 = 0;
    for class in SemanticClass::ALL {
        for p in map_polys.get(class) {
            map.classes.get_mut(class).push(crate::map_model::GlobalPolyline {
                global_id: gid,
                geometry: p.clone(),
                support_frames: std::collections::BTreeSet::from([0]),
                source_ids: std::collections::BTreeSet::new(),
            });
            gid += 1;
        }
    }
    (map_polys, map)
}

#[test]
fn localize_recovers_known_offset() {
    let (map_polys, map) = two_stage_scene();
    let truth = Pose2D::new(0.5, 0.3, (2.0f64).to_radians());
    let frame = observation_from(&map_polys, &truth);
    let cfg = LocalizationConfig { min_points: 10, ..LocalizationConfig::default() };
    let result = localize(&frame, &map, &Pose2D::identity(), &cfg).unwrap();
    let (t, h) = crate::evalmetrics::pose_errors(&result.pose, &truth);
    assert!(t <= 0.02, "translation error {t}");
    assert!(h <= 0.05, "heading error {h}");
}

#[test]
fn localize_tolerates_clutter() {
    let (map_polys, map) = two_stage_scene();
    let truth = Pose2D::new(0.5, 0.3, (2.0f64).to_radians());
    let clean_frame = observation_from(&map_polys, &truth);
    let cfg = LocalizationConfig { min_points: 10, ..LocalizationConfig::default() };
    let clean = localize(&clean_frame, &map, &Pose2D::identity(), &cfg).unwrap();
    let (clean_t, _) = crate::evalmetrics::pose_errors(&clean.pose, &truth);

    // Replace 40% of divider polylines with uniform clutter in a 5 m band.
    let mut rng = Rng64::seed_from(9);
    let mut dirty = clean_frame.clone();
    let dividers = dirty.polylines.get_mut(SemanticClass::LaneDivider);
    let n_replace = (dividers.len() as f64 * 0.4).ceil() as usize;
    for fp in dividers.iter_mut().take(n_replace) {
        let y0 = rng.uniform(-2.5, 2.5);
        let pts: Vec<Point2> = (0..40)
            .map(|i| Point2::new(i as f64 * 1.0, y0 + rng.uniform(-0.5, 0.5)))
            .collect();
        fp.geometry = Polyline::dedup(SemanticClass::LaneDivider, pts).unwrap();
    }
    let noisy = localize(&dirty, &map, &Pose2D::identity(), &cfg).unwrap();
    let (noisy_t, _) = crate::evalmetrics::pose_errors(&noisy.pose, &truth);
    assert!(
        noisy_t <= (3.0 * clean_t).max(0.05),
        "clutter error {noisy_t} vs clean {clean_t}"
    );
}

#[test]
fn localize_rejects_sparse_frames() {
    let (_, map) = two_stage_scene();
    let tiny = class_polys(vec![(
        SemanticClass::LaneDivider,
        line(SemanticClass::LaneDivider, &[(0.0, 0.0), (1.0, 0.0)]),
    )]);
    let frame = observation_from(&tiny, &Pose2D::identity());
    let cfg = LocalizationConfig::default();
    // A 1 m divider samples to ~6 points, far below the 30-point minimum.
    assert!(matches!(
        localize(&frame, &map, &Pose2D::identity(), &cfg),
        Err(LocalizationError::InsufficientInput(_))
    ));
}

#[test]
fn localize_without_boundary_falls_through_to_fine_stage() {
    let polys = class_polys(vec![
        (SemanticClass::LaneDivider, line(SemanticClass::LaneDivider, &[(0.0, 0.0), (40.0, 0.0)])),
        (SemanticClass::LaneDivider, line(SemanticClass::LaneDivider, &[(0.0, 3.5), (40.0, 3.5)])),
        (SemanticClass::PedCrossing, line(SemanticClass::PedCrossing, &[(15.0, -2.0), (15.0, 2.0)])),
    ]);
    let mut map = GlobalVectorMap::empty("nb", crate::fusion::FusionConfig::default());
    for (class, list) in
        [(SemanticClass::LaneDivider, 2usize), (SemanticClass::PedCrossing, 1)]
    {
        for i in 0..list {
            map.classes.get_mut(class).push(crate::map_model::GlobalPolyline {
                global_id: i as u64,
                geometry: polys.get(class)[i].clone(),
                support_frames: std::collections::BTreeSet::from([0]),
                source_ids: std::collections::BTreeSet::new(),
            });
        }
    }
    let truth = Pose2D::new(0.3, 0.2, 0.01);
    let frame = observation_from(&polys, &truth);
    let cfg = LocalizationConfig { min_points: 10, ..LocalizationConfig::default() };
    let result = localize(&frame, &map, &Pose2D::identity(), &cfg).unwrap();
    assert_eq!(result.iterations_used[0], 0, "coarse stage must be skipped");
    let (t, _) = crate::evalmetrics::pose_errors(&result.pose, &truth);
    assert!(t < 0.05, "error {t}");
}

#[test]
fn localization_is_deterministic() {
    let (map_polys, map) = two_stage_scene();
    let truth = Pose2D::new(-0.4, 0.6, -0.02);
    let frame = observation_from(&map_polys, &truth);
    let cfg = LocalizationConfig { min_points: 10, ..LocalizationConfig::default() };
    let a = localize(&frame, &map, &Pose2D::identity(), &cfg).unwrap();
    let b = localize(&frame, &map, &Pose2D::identity(), &cfg).unwrap();
    assert_eq!(a, b);
}
