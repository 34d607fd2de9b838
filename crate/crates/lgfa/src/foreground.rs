//! Reprojection of the ego pose and detected objects into the completed-map
//! frame, forming the augmented frame handed to downstream consumers.

use crate::completion::CompletedSet;
use crate::map_model::{wrap_angle, ObjectBox, Pose2D};

/// Completed vector map plus ego pose and object boxes, all in one global
/// reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedFrame {
    pub frame_index: u64,
    pub refined_pose: Pose2D,
    pub completed_map: CompletedSet,
    pub ego_in_map: Pose2D,
    pub objects_in_map: Vec<ObjectBox>,
}

/// Transforms ego-frame object boxes by the refined pose and attaches the
/// completed map. Box extents are untouched; yaw picks up the pose heading.
pub fn augment(
    frame_index: u64,
    objects: &[ObjectBox],
    theta: &Pose2D,
    completed: CompletedSet,
) -> AugmentedFrame {
    let objects_in_map = objects
        .iter()
        .map(|b| ObjectBox {
            center: theta.apply(b.center),
            yaw: wrap_angle(b.yaw + theta.phi),
            length: b.length,
            width: b.width,
            label: b.label.clone(),
        })
        .collect();
    AugmentedFrame {
        frame_index,
        refined_pose: *theta,
        completed_map: completed,
        ego_in_map: *theta,
        objects_in_map,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point2;
    use crate::scenario::rng::Rng64;

    fn boxes(n: usize, rng: &mut Rng64) -> Vec<ObjectBox> {
        (0..n)
            .map(|i| ObjectBox {
                center: Point2::new(rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)),
                yaw: rng.uniform(-3.0, 3.0),
                length: rng.uniform(0.5, 6.0),
                width: rng.uniform(0.5, 3.0),
                label: format!("obj{i}"),
            })
            .collect()
    }

    #[test]
    fn identity_pose_leaves_objects_unchanged() {
        let mut rng = Rng64::seed_from(1);
        let objs = boxes(5, &mut rng);
        let aug = augment(0, &objs, &Pose2D::identity(), CompletedSet::default());
        for (a, b) in aug.objects_in_map.iter().zip(objs.iter()) {
            assert_eq!(a.center, b.center);
            assert!((a.yaw - crate::map_model::wrap_angle(b.yaw)).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_turn_moves_and_rotates() {
        let objs = vec![ObjectBox {
            center: Point2::new(1.0, 0.0),
            yaw: 0.0,
            length: 4.0,
            width: 2.0,
            label: "car".into(),
        }];
        let theta = Pose2D::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let aug = augment(0, &objs, &theta, CompletedSet::default());
        let b = &aug.objects_in_map[0];
        assert!(b.center.x.abs() < 1e-12 && (b.center.y - 1.0).abs() < 1e-12);
        assert!((b.yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn corners_transform_consistently() {
        // Corner-consistency oracle: corners of the transformed box equal
        // the individually transformed corners.
        let mut rng = Rng64::seed_from(13);
        let theta = Pose2D::new(rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-3.0, 3.0));
        let objs = boxes(20, &mut rng);
        let aug = augment(3, &objs, &theta, CompletedSet::default());
        for (orig, moved) in objs.iter().zip(aug.objects_in_map.iter()) {
            assert_eq!(orig.length, moved.length);
            assert_eq!(orig.width, moved.width);
            for (c_orig, c_moved) in orig.corners().iter().zip(moved.corners().iter()) {
                let direct = theta.apply(*c_orig);
                assert!(direct.dist(c_moved) < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_recovers_ego_frame() {
        let mut rng = Rng64::seed_from(29);
        let theta = Pose2D::new(3.0, -2.0, 0.8);
        let inv = theta.inverse();
        let objs = boxes(10, &mut rng);
        let aug = augment(0, &objs, &theta, CompletedSet::default());
        for (orig, moved) in objs.iter().zip(aug.objects_in_map.iter()) {
            let back = inv.apply(moved.center);
            assert!(back.dist(&orig.center) < 1e-9);
        }
        assert_eq!(aug.ego_in_map, aug.refined_pose);
    }
}
