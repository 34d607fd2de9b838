use super::*;
use crate::geom::symmetric_discrepancy;
use crate::map_model::FramePolyline;
use std::collections::BTreeSet;

fn line(class: SemanticClass, pts: &[(f64, f64)]) -> Polyline {
    Polyline::new(class, pts.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap()
}

fn elem(gid: u64, geometry: Polyline) -> GlobalPolyline {
    GlobalPolyline {
        global_id: gid,
        geometry,
        support_frames: BTreeSet::from([0]),
        source_ids: BTreeSet::new(),
    }
}

fn frame_with(polys: Vec<Polyline>) -> FrameObservation {
    let mut obs = FrameObservation {
        frame_index: 0,
        ego_pose_ref: Pose2D::identity(),
        polylines: ClassMap::default(),
    };
    for p in polys {
        let class = p.class_id();
        obs.polylines.get_mut(class).push(FramePolyline { geometry: p, persistent_id: None });
    }
    obs
}

fn map_with(elems: Vec<GlobalPolyline>) -> GlobalVectorMap {
    let mut map = GlobalVectorMap::empty("test", crate::fusion::FusionConfig::default());
    for e in elems {
        let class = e.geometry.class_id();
        map.classes.get_mut(class).push(e);
    }
    map
}

fn covered_length(intervals: &[CoverageInterval]) -> f64 {
    intervals.iter().filter(|i| i.covered).map(|i| i.end_s - i.start_s).sum()
}

#[test]
fn coverage_full_and_empty() {
    let cfg = CompletionConfig::default();
    let g = elem(0, line(SemanticClass::LaneDivider, &[(0.0, 0.0), (10.0, 0.0)]));
    let full = coverage(&g, &[g.geometry.clone()], &cfg);
    assert_eq!(full.len(), 1);
    assert!(full[0].covered);
    assert_eq!((full[0].start_s, full[0].end_s), (0.0, 10.0));

    let none = coverage(&g, &[], &cfg);
    assert_eq!(none.len(), 1);
    assert!(!none[0].covered);
}

#[test]
fn coverage_finds_mid_gap() {
    // Pieces sit just inside the buffer laterally so the longitudinal smear
    // at the piece ends stays below the sampling step.
    let cfg = CompletionConfig::default();
    let g = elem(0, line(SemanticClass::LaneDivider, &[(0.0, 0.0), (10.0, 0.0)]));
    let off = 0.74;
    let pieces = vec![
        line(SemanticClass::LaneDivider, &[(0.0, off), (4.0, off)]),
        line(SemanticClass::LaneDivider, &[(6.0, off), (10.0, off)]),
    ];
    let intervals = coverage(&g, &pieces, &cfg);
    let uncovered: Vec<&CoverageInterval> = intervals.iter().filter(|i| !i.covered).collect();
    assert_eq!(uncovered.len(), 1);
    assert!((uncovered[0].start_s - 4.0).abs() <= 0.25, "{}", uncovered[0].start_s);
    assert!((uncovered[0].end_s - 6.0).abs() <= 0.25, "{}", uncovered[0].end_s);
}

#[test]
fn coverage_partitions_arc_length() {
    let cfg = CompletionConfig::default();
    let g = elem(0, line(SemanticClass::LaneDivider, &[(0.0, 0.0), (7.3, 0.0), (12.9, 2.0)]));
    let pieces = vec![line(SemanticClass::LaneDivider, &[(2.0, 0.1), (5.0, 0.1)])];
    let intervals = coverage(&g, &pieces, &cfg);
    let total: f64 = intervals.iter().map(|i| i.end_s - i.start_s).sum();
    assert!((total - crate::geom::arc_length(&g.geometry)).abs() < 1e-9);
    for w in intervals.windows(2) {
        assert!((w[0].end_s - w[1].start_s).abs() < 1e-12);
        assert_ne!(w[0].covered, w[1].covered);
    }
}

#[test]
fn short_gap_is_bridged_into_one_polyline() {
    let cfg = CompletionConfig::default();
    let g = elem(0, line(SemanticClass::LaneDivider, &[(0.0, 0.0), (10.0, 0.0)]));
    let map = map_with(vec![g]);
    let frame = frame_with(vec![
        line(SemanticClass::LaneDivider, &[(0.0, 0.0), (4.25, 0.0)]),
        line(SemanticClass::LaneDivider, &[(5.75, 0.0), (10.0, 0.0)]),
    ]);
    let out = complete(&map, &frame, &Pose2D::identity(), &cfg);
    let completed = out.classes.get(SemanticClass::LaneDivider);
    assert_eq!(completed.len(), 1, "one stitched polyline per element");
    assert!(completed[0].runs.iter().any(|r| r.src == SourceTag::Bridged));
    assert!(completed[0].runs.iter().all(|r| r.src != SourceTag::Spliced));
    let geom = completed[0].geometry();
    assert!((crate::geom::arc_length(&geom) - 10.0).abs() < 0.1);
}

#[test]
fn long_gap_is_spliced_from_global_geometry() {
    let cfg = CompletionConfig::default();
    // A gentle arc as the global element.
    let pts: Vec<(f64, f64)> = (0..=80)
        .map(|i| {
            let a = i as f64 / 80.0;
            (40.0 * a, 3.0 * (std::f64::consts::PI * a).sin())
        })
        .collect();
    let g = elem(0, line(SemanticClass::LaneDivider, &pts));
    let total = crate::geom::arc_length(&g.geometry);
    let head = g.geometry.sub_polyline(0.0, 8.0).unwrap();
    let tail = g.geometry.sub_polyline(total - 8.0, total).unwrap();
    let map = map_with(vec![g.clone()]);
    let frame = frame_with(vec![head, tail]);

    let out = complete(&map, &frame, &Pose2D::identity(), &cfg);
    let completed = &out.classes.get(SemanticClass::LaneDivider)[0];
    let spliced: Vec<&CompletedRun> =
        completed.runs.iter().filter(|r| r.src == SourceTag::Spliced).collect();
    assert_eq!(spliced.len(), 1);
    // Splice fidelity: the spliced span follows the global curve.
    let splice_poly = Polyline::dedup(SemanticClass::LaneDivider, spliced[0].pts.clone()).unwrap();
    let d = symmetric_discrepancy(&splice_poly, &g.geometry, cfg.resample_step);
    // Forward direction only: the splice covers a sub-span of the element.
    let samples = crate::geom::resample(&splice_poly, cfg.resample_step);
    let elem_samples = crate::geom::resample(&g.geometry, cfg.resample_step);
    let fwd = crate::geom::directed_distance(&samples, &elem_samples).unwrap();
    assert!(fwd <= cfg.buffer + cfg.resample_step, "splice deviates {fwd}");
    drop(d);
}

#[test]
fn empty_frame_emits_whole_elements() {
    let cfg = CompletionConfig::default();
    let g = elem(0, line(SemanticClass::RoadBoundary, &[(0.0, 3.5), (50.0, 3.5)]));
    let map = map_with(vec![g.clone()]);
    let frame = frame_with(vec![]);
    let out = complete(&map, &frame, &Pose2D::identity(), &cfg);
    let completed = out.classes.get(SemanticClass::RoadBoundary);
    assert_eq!(completed.len(), 1);
    assert_eq!(completed[0].runs.len(), 1);
    assert_eq!(completed[0].runs[0].src, SourceTag::Spliced);
    assert_eq!(completed[0].geometry().vertices(), g.geometry.vertices());
}

#[test]
fn gap_of_exactly_eta_takes_the_splice_branch() {
    let cfg = CompletionConfig::default();
    let g = elem(0, line(SemanticClass::LaneDivider, &[(0.0, 0.0), (12.0, 0.0)]));
    let map = map_with(vec![g]);
    // Pieces end exactly eta apart along the element.
    let frame = frame_with(vec![
        line(SemanticClass::LaneDivider, &[(0.0, 0.0), (5.0, 0.0)]),
        line(SemanticClass::LaneDivider, &[(7.0, 0.0), (12.0, 0.0)]),
    ]);
    let out = complete(&map, &frame, &Pose2D::identity(), &cfg);
    let completed = &out.classes.get(SemanticClass::LaneDivider)[0];
    assert!(
        completed.runs.iter().any(|r| r.src == SourceTag::Spliced),
        "gap == eta must splice, runs: {:?}",
        completed.runs.iter().map(|r| r.src).collect::<Vec<_>>()
    );
}

#[test]
fn unmatched_observations_pass_through() {
    let cfg = CompletionConfig::default();
    let g = elem(0, line(SemanticClass::LaneDivider, &[(0.0, 0.0), (10.0, 0.0)]));
    let map = map_with(vec![g]);
    // A divider far away from the mapped one: new observation.
    let stray = line(SemanticClass::LaneDivider, &[(0.0, 30.0), (10.0, 30.0)]);
    let frame = frame_with(vec![stray.clone()]);
    let out = complete(&map, &frame, &Pose2D::identity(), &cfg);
    let completed = out.classes.get(SemanticClass::LaneDivider);
    assert_eq!(completed.len(), 2);
    let pass_through = completed.iter().find(|c| c.source_gid.is_none()).unwrap();
    assert_eq!(pass_through.geometry().vertices(), stray.vertices());
}

#[test]
fn completion_rate_examples() {
    let cfg = CompletionConfig::default();
    let g = elem(0, line(SemanticClass::LaneDivider, &[(0.0, 0.0), (20.0, 0.0)]));
    let reference = map_with(vec![g.clone()]);

    let full = ClassMap::from_fn(|c| {
        if c == SemanticClass::LaneDivider {
            vec![g.geometry.clone()]
        } else {
            Vec::new()
        }
    });
    let rate = completion_rate(&full, &reference, &cfg);
    assert_eq!(*rate.get(SemanticClass::LaneDivider), Some(100.0));
    assert_eq!(*rate.get(SemanticClass::RoadBoundary), None);

    // Half coverage within delta-quantization of 50%. The output half is
    // laterally just inside the buffer so end smear stays small.
    let half = ClassMap::from_fn(|c| {
        if c == SemanticClass::LaneDivider {
            vec![line(SemanticClass::LaneDivider, &[(0.0, 0.74), (10.0, 0.74)])]
        } else {
            Vec::new()
        }
    });
    let rate = completion_rate(&half, &reference, &cfg);
    let got = rate.get(SemanticClass::LaneDivider).unwrap();
    let quant = cfg.resample_step / 20.0 * 100.0 + 2.0;
    assert!((got - 50.0).abs() <= quant, "rate {got}");
}

#[test]
fn completion_never_reduces_coverage() {
    let cfg = CompletionConfig::default();
    let g = elem(0, line(SemanticClass::LaneDivider, &[(0.0, 0.0), (30.0, 0.0)]));
    let map = map_with(vec![g]);
    let observed = vec![
        line(SemanticClass::LaneDivider, &[(2.0, 0.05), (9.0, 0.05)]),
        line(SemanticClass::LaneDivider, &[(18.0, -0.05), (26.0, -0.05)]),
    ];
    let frame = frame_with(observed.clone());
    let out = complete(&map, &frame, &Pose2D::identity(), &cfg);

    let reference = map_with(vec![elem(
        0,
        line(SemanticClass::LaneDivider, &[(0.0, 0.0), (30.0, 0.0)]),
    )]);
    let raw_rate = completion_rate(
        &ClassMap::from_fn(|c| {
            if c == SemanticClass::LaneDivider {
                observed.clone()
            } else {
                Vec::new()
            }
        }),
        &reference,
        &cfg,
    );
    let full_rate = completion_rate(&out.polylines_by_class(), &reference, &cfg);
    let raw = raw_rate.get(SemanticClass::LaneDivider).unwrap();
    let full = full_rate.get(SemanticClass::LaneDivider).unwrap();
    assert!(full >= raw, "completion reduced coverage: {full} < {raw}");
    assert!(full > 99.0, "completed rate only {full}");
}

#[test]
fn coverage_interval_lengths_stay_positive() {
    let cfg = CompletionConfig::default();
    let g = elem(0, line(SemanticClass::LaneDivider, &[(0.0, 0.0), (10.0, 0.0)]));
    let pieces = vec![line(SemanticClass::LaneDivider, &[(3.0, 0.7), (3.4, 0.7)])];
    for interval in coverage(&g, &pieces, &cfg) {
        assert!(interval.end_s > interval.start_s);
    }
}
