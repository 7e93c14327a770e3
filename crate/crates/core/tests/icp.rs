use gmpose::pose_fit::{icp_refine, pose_correct, Hypothesis, IcpConfig, KdTree, Pose};
use nalgebra::{Rotation3, Unit, UnitQuaternion, Vector3};

/// Points on the surface of a 0.2 x 0.12 x 0.08 box, 1 cm apart.
fn box_surface() -> Vec<Vector3<f64>> {
    let (a, b, c) = (0.1, 0.06, 0.04);
    let mut pts = Vec::new();
    let steps = |h: f64| -> Vec<f64> {
        let n = (2.0 * h / 0.01).round() as i32;
        (0..=n).map(|k| -h + k as f64 * 0.01).collect()
    };
    for x in steps(a) {
        for y in steps(b) {
            for z in steps(c) {
                let on = (x.abs() - a).abs() < 1e-9 || (y.abs() - b).abs() < 1e-9 || (z.abs() - c).abs() < 1e-9;
                if on {
                    pts.push(Vector3::new(x, y, z));
                }
            }
        }
    }
    pts
}

fn diameter() -> f64 {
    (0.2f64.powi(2) + 0.12f64.powi(2) + 0.08f64.powi(2)).sqrt()
}

fn truth() -> Pose<f64> {
    Pose {
        rotation: Rotation3::from_euler_angles(0.3, -0.2, 0.9).into_inner(),
        translation: Vector3::new(0.05, -0.02, 1.1),
    }
}

fn hypothesis_at(pose: Pose<f64>, model: &[Vector3<f64>], truth: &Pose<f64>) -> Hypothesis<f64> {
    let correspondences = model.iter().step_by(7).map(|y| (*y, truth.apply(y))).collect();
    Hypothesis { correspondences, pose, score: None, refined: false, iterations: 0 }
}

fn rotation_gap(a: &Pose<f64>, b: &Pose<f64>) -> f64 {
    (a.rotation - b.rotation).norm()
}

#[test]
fn true_pose_is_a_fixed_point() {
    let model = box_surface();
    let tree = KdTree::new(model.clone());
    let t = truth();
    let h = hypothesis_at(t, &model, &t);
    let r = icp_refine(&h, &tree, diameter(), &IcpConfig::default());
    assert!(r.refined);
    assert!(r.score.unwrap() < 1e-12);
    assert!(rotation_gap(&r.pose, &t) < 1e-9);
    assert!((r.pose.translation - t.translation).norm() < 1e-9);
}

#[test]
fn small_perturbation_is_pulled_back() {
    let model = box_surface();
    let tree = KdTree::new(model.clone());
    let t = truth();
    let nudge = Rotation3::from_euler_angles(0.02, 0.0, -0.015).into_inner();
    let start = Pose { rotation: nudge * t.rotation, translation: t.translation + Vector3::new(0.004, -0.003, 0.002) };
    let h = hypothesis_at(start, &model, &t);
    let before = icp_refine(&h, &tree, diameter(), &IcpConfig { max_iterations: 0, ..Default::default() });
    let after = icp_refine(&h, &tree, diameter(), &IcpConfig::default());
    assert!(after.iterations > 0);
    assert!(after.score.unwrap() <= before.score.unwrap());
    assert!(after.score.unwrap() < 1e-6, "score {:?}", after.score);
    assert!(rotation_gap(&after.pose, &t) < rotation_gap(&start, &t));
    assert!((after.pose.translation - t.translation).norm() < 1e-4);
}

#[test]
fn score_never_increases_over_iterations() {
    let model = box_surface();
    let tree = KdTree::new(model.clone());
    let t = truth();
    let nudge = Rotation3::from_euler_angles(0.05, 0.04, 0.0).into_inner();
    let start = Pose { rotation: nudge * t.rotation, translation: t.translation + Vector3::new(0.01, 0.0, -0.005) };
    let h = hypothesis_at(start, &model, &t);
    let mut last = f64::INFINITY;
    for k in 0..8 {
        let r = icp_refine(&h, &tree, diameter(), &IcpConfig { max_iterations: k, ..Default::default() });
        let s = r.score.unwrap();
        assert!(s <= last + 1e-15, "iteration cap {k}: {s} after {last}");
        last = s;
    }
}

#[test]
fn nothing_within_the_gate_means_infinite_score() {
    let model = box_surface();
    let tree = KdTree::new(model.clone());
    let t = truth();
    let far = Pose { translation: t.translation + Vector3::new(1.0, 0.0, 0.0), ..t };
    let h = hypothesis_at(far, &model, &t);
    let r = icp_refine(&h, &tree, diameter(), &IcpConfig::default());
    assert_eq!(r.score, None);
    assert_eq!(r.iterations, 0);
    assert_eq!(r.pose, far);
}

#[test]
fn single_precision_refinement() {
    let model: Vec<Vector3<f32>> = box_surface().iter().map(|p| p.cast()).collect();
    let tree = KdTree::new(model.clone());
    let t = truth();
    let t32 = Pose { rotation: t.rotation.cast::<f32>(), translation: t.translation.cast::<f32>() };
    let correspondences = model.iter().step_by(7).map(|y| (*y, t32.apply(y))).collect();
    let h = Hypothesis { correspondences, pose: t32, score: None, refined: false, iterations: 0 };
    let r = icp_refine(&h, &tree, diameter() as f32, &IcpConfig::default());
    assert!(r.score.unwrap() < 1e-5);
}

#[test]
fn five_degrees_and_two_percent_converge_within_one_percent() {
    let model = box_surface();
    let tree = KdTree::new(model.clone());
    let t = truth();
    let axis = Unit::new_normalize(Vector3::new(1.0, -2.0, 0.5));
    let turn = UnitQuaternion::from_axis_angle(&axis, 5f64.to_radians()).to_rotation_matrix().into_inner();
    let shift = Vector3::new(0.6, 0.0, 0.8) * (0.02 * diameter());
    let start = Pose { rotation: turn * t.rotation, translation: t.translation + shift };
    let r = icp_refine(&hypothesis_at(start, &model, &t), &tree, diameter(), &IcpConfig::default());
    let (_, before) = pose_correct(&start, &t, &model, diameter());
    let (_, after) = pose_correct(&r.pose, &t, &model, diameter());
    assert!(after < 0.01 * diameter(), "average distance {after} (from {before})");
}
