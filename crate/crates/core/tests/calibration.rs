//! End-to-end tests of the calibration solver chain on a synthetic rig
//! with known ground truth.

mod common;

use common::*;
use nalgebra::{UnitQuaternion, Vector3};
use posechain_core::handeye::{
    initialize, pnp_pose, refine, CalibError, CalibrationShot, CalibrationTarget,
    IntrinsicsMask, RefineOptions, TargetPoint,
};
use posechain_core::metrics::{self, Trajectory};
use posechain_core::se3::RigidTransform;
use posechain_core::InitialEstimate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn pnp_recovers_exact_pose_without_noise() {
    let camera = intrinsics();
    let target = target();
    let x = hand_eye_truth();
    let w = world_base_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shots = make_shots(
        &diverse_stations()[..1],
        &x,
        &w,
        &camera,
        &target,
        0.0,
        &mut rng,
    );
    let truth = look_at_origin(diverse_stations()[0]);
    let estimate = pnp_pose(&shots[0], &target, &camera).unwrap();
    let (dt, dr) = pose_distance(&estimate.pose, &truth);
    assert!(dt < 1e-9, "translation error {dt}");
    assert!(dr < 1e-8, "rotation error {dr}");
    assert!(estimate.rrms < 1e-9, "rrms {}", estimate.rrms);
}

#[test]
fn pnp_reports_injected_noise_as_pixel_rms() {
    let camera = intrinsics();
    let target = target();
    let x = hand_eye_truth();
    let w = world_base_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // Per-component sigma of 0.1/sqrt(2) makes the expected 2D residual
    // magnitude 0.1 px RMS.
    let sigma = 0.1 / 2.0f64.sqrt();
    let shots = make_shots(
        &diverse_stations(),
        &x,
        &w,
        &camera,
        &target,
        sigma,
        &mut rng,
    );
    for shot in &shots {
        let estimate = pnp_pose(shot, &target, &camera).unwrap();
        assert!(
            (0.05..=0.2).contains(&estimate.rrms),
            "rrms {} outside the expected band",
            estimate.rrms
        );
    }
}

#[test]
fn pnp_requires_six_observations() {
    let camera = intrinsics();
    let target = target();
    let x = hand_eye_truth();
    let w = world_base_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let full = make_shots(
        &diverse_stations()[..1],
        &x,
        &w,
        &camera,
        &target,
        0.0,
        &mut rng,
    );
    let reduced = CalibrationShot::new(
        "few",
        *full[0].robot_pose(),
        full[0].observations()[..5].to_vec(),
        &target,
    )
    .unwrap();
    assert!(matches!(
        pnp_pose(&reduced, &target, &camera),
        Err(CalibError::DegenerateConfiguration(_))
    ));
}

#[test]
fn initialize_recovers_truth_without_noise() {
    let camera = intrinsics();
    let target = target();
    let x = hand_eye_truth();
    let w = world_base_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let shots = make_shots(
        &diverse_stations(),
        &x,
        &w,
        &camera,
        &target,
        0.0,
        &mut rng,
    );
    let estimate = initialize(&shots, &target, &camera).unwrap();
    let (dt_x, dr_x) = pose_distance(&estimate.hand_eye, &x);
    let (dt_w, dr_w) = pose_distance(&estimate.world_base, &w);
    assert!(dt_x < 1e-6, "hand-eye translation error {dt_x}");
    assert!(dr_x < 1e-6, "hand-eye rotation error {dr_x}");
    assert!(dt_w < 1e-6, "world translation error {dt_w}");
    assert!(dr_w < 1e-6, "world rotation error {dr_w}");
}

#[test]
fn initialize_rejects_single_axis_motion() {
    let camera = intrinsics();
    let target = target();
    let x = hand_eye_truth();
    let w = world_base_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let shots = make_shots(
        &single_ring_stations(),
        &x,
        &w,
        &camera,
        &target,
        0.0,
        &mut rng,
    );
    assert!(matches!(
        initialize(&shots, &target, &camera),
        Err(CalibError::InsufficientMotion(_))
    ));
}

#[test]
fn initialize_rejects_too_few_shots() {
    let camera = intrinsics();
    let target = target();
    let x = hand_eye_truth();
    let w = world_base_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let shots = make_shots(
        &diverse_stations()[..2],
        &x,
        &w,
        &camera,
        &target,
        0.0,
        &mut rng,
    );
    assert!(matches!(
        initialize(&shots, &target, &camera),
        Err(CalibError::InsufficientMotion(_))
    ));
}

#[test]
fn refine_noiseless_pulls_perturbed_start_back_to_truth() {
    let camera = intrinsics();
    let target = target();
    let x = hand_eye_truth();
    let w = world_base_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let shots = make_shots(
        &diverse_stations(),
        &x,
        &w,
        &camera,
        &target,
        0.0,
        &mut rng,
    );
    let initial = InitialEstimate {
        hand_eye: perturbed(&x, 0.03, 0.008, &mut rng),
        world_base: perturbed(&w, 0.02, 0.01, &mut rng),
        intrinsics: camera,
    };
    let options = RefineOptions {
        intrinsics_mask: IntrinsicsMask::none(),
        ..RefineOptions::default()
    };
    let result = refine(&shots, &target, &initial, &options).unwrap();
    assert!(result.converged);
    let (dt_x, dr_x) = pose_distance(&result.hand_eye, &x);
    let (dt_w, dr_w) = pose_distance(&result.world_base, &w);
    assert!(dt_x < 1e-7, "hand-eye translation error {dt_x}");
    assert!(dr_x < 1e-7, "hand-eye rotation error {dr_x}");
    assert!(dt_w < 1e-7, "world translation error {dt_w}");
    assert!(dr_w < 1e-7, "world rotation error {dr_w}");
    assert!(result.rrms < 1e-8, "rrms {}", result.rrms);
    assert!(result.rmst < 1e-4, "rmst {}", result.rmst);
    assert!(result.rmsr < 1e-5, "rmsr {}", result.rmsr);
}

#[test]
fn refine_recovers_perturbed_intrinsics_from_nominal_start() {
    let camera = intrinsics();
    let target = target();
    let x = hand_eye_truth();
    let w = world_base_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let shots = make_shots(
        &diverse_stations(),
        &x,
        &w,
        &camera,
        &target,
        0.0,
        &mut rng,
    );
    // A vendor-datasheet style starting point: focal length 1.5% off,
    // principal point 5 px off, no distortion knowledge.
    let mut nominal = camera;
    nominal.fx *= 1.015;
    nominal.cx += 5.0;
    nominal.k1 = 0.0;
    nominal.k2 = 0.0;
    nominal.k3 = 0.0;
    nominal.p1 = 0.0;
    nominal.p2 = 0.0;
    let estimate = initialize(&shots, &target, &nominal).unwrap();
    let result = refine(&shots, &target, &estimate, &RefineOptions::default()).unwrap();
    assert!(result.converged);
    assert!(
        (result.intrinsics.fx - camera.fx).abs() / camera.fx < 0.001,
        "fx {} vs {}",
        result.intrinsics.fx,
        camera.fx
    );
    assert!(
        (result.intrinsics.cx - camera.cx).abs() < 0.5,
        "cx {} vs {}",
        result.intrinsics.cx,
        camera.cx
    );
    let (dt_x, dr_x) = pose_distance(&result.hand_eye, &x);
    assert!(dt_x < 5e-4, "hand-eye translation error {dt_x}");
    assert!(dr_x < 1e-3, "hand-eye rotation error {dr_x}");
    assert!(result.rrms < 1e-3, "rrms {}", result.rrms);
}

#[test]
fn refine_from_truth_stops_immediately() {
    let camera = intrinsics();
    let target = target();
    let x = hand_eye_truth();
    let w = world_base_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let shots = make_shots(
        &diverse_stations(),
        &x,
        &w,
        &camera,
        &target,
        0.0,
        &mut rng,
    );
    let initial = InitialEstimate {
        hand_eye: x,
        world_base: w,
        intrinsics: camera,
    };
    let result = refine(&shots, &target, &initial, &RefineOptions::default()).unwrap();
    assert!(result.converged);
    assert!(result.iterations <= 2, "iterations {}", result.iterations);
    let (dt_x, dr_x) = pose_distance(&result.hand_eye, &x);
    assert!(dt_x < 1e-12 && dr_x < 1e-12);
    assert!(result.rrms < 1e-10);
}

#[test]
fn reported_rrms_is_bit_identical_to_shared_metric() {
    let camera = intrinsics();
    let target = target();
    let x = hand_eye_truth();
    let w = world_base_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let shots = make_shots(
        &diverse_stations(),
        &x,
        &w,
        &camera,
        &target,
        0.05,
        &mut rng,
    );
    let initial = InitialEstimate {
        hand_eye: x,
        world_base: w,
        intrinsics: camera,
    };
    let options = RefineOptions {
        intrinsics_mask: IntrinsicsMask::none(),
        ..RefineOptions::default()
    };
    let result = refine(&shots, &target, &initial, &options).unwrap();
    let chain = Trajectory::new(
        shots
            .iter()
            .map(|s| (s.frame_id().to_string(), result.camera_pose(s.robot_pose())))
            .collect(),
    )
    .unwrap();
    let recomputed = metrics::rrms(&shots, &chain, &result.intrinsics, &target).unwrap();
    assert_eq!(
        result.rrms.to_bits(),
        recomputed.to_bits(),
        "refine must report exactly the shared reprojection metric"
    );
}

#[test]
fn refined_rrms_tracks_injected_noise_magnitude() {
    let camera = intrinsics();
    let target = target();
    let x = hand_eye_truth();
    let w = world_base_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    // Per-component sigma sigma_c yields 2D residual RMS sigma_c*sqrt(2).
    let sigma_c = 0.1 / 2.0f64.sqrt();
    let expected = sigma_c * 2.0f64.sqrt();
    let shots = make_shots(
        &diverse_stations(),
        &x,
        &w,
        &camera,
        &target,
        sigma_c,
        &mut rng,
    );
    let initial = InitialEstimate {
        hand_eye: x,
        world_base: w,
        intrinsics: camera,
    };
    let options = RefineOptions {
        intrinsics_mask: IntrinsicsMask::none(),
        ..RefineOptions::default()
    };
    let result = refine(&shots, &target, &initial, &options).unwrap();
    assert!(
        (result.rrms - expected).abs() / expected < 0.1,
        "rrms {} not within 10% of {expected}",
        result.rrms
    );
}

#[test]
fn world_frame_gauge_shift_leaves_solution_equivalent() {
    let camera = intrinsics();
    let target = target();
    let x = hand_eye_truth();
    let w = world_base_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let shots = make_shots(
        &diverse_stations(),
        &x,
        &w,
        &camera,
        &target,
        0.05,
        &mut rng,
    );

    // Re-express the target points in a rotated and shifted world frame.
    let gauge = RigidTransform::new(
        UnitQuaternion::from_euler_angles(0.3, -0.2, 0.5),
        Vector3::new(0.1, -0.05, 0.2),
    );
    let moved_points: Vec<TargetPoint> = target
        .points()
        .iter()
        .map(|p| {
            let q = gauge.transform_point(&Vector3::new(p.x, p.y, p.z));
            TargetPoint {
                point_id: p.point_id,
                x: q.x,
                y: q.y,
                z: q.z,
            }
        })
        .collect();
    let moved_target = CalibrationTarget::new(moved_points).unwrap();
    let moved_shots: Vec<CalibrationShot> = shots
        .iter()
        .map(|s| {
            CalibrationShot::new(
                s.frame_id(),
                *s.robot_pose(),
                s.observations().to_vec(),
                &moved_target,
            )
            .unwrap()
        })
        .collect();
    let moved_w = w.compose(&gauge.invert());

    let options = RefineOptions {
        intrinsics_mask: IntrinsicsMask::none(),
        ..RefineOptions::default()
    };
    let base = refine(
        &shots,
        &target,
        &InitialEstimate {
            hand_eye: x,
            world_base: w,
            intrinsics: camera,
        },
        &options,
    )
    .unwrap();
    let moved = refine(
        &moved_shots,
        &moved_target,
        &InitialEstimate {
            hand_eye: x,
            world_base: moved_w,
            intrinsics: camera,
        },
        &options,
    )
    .unwrap();

    assert!(
        (base.rrms - moved.rrms).abs() / base.rrms < 1e-6,
        "rrms changed under a world gauge shift: {} vs {}",
        base.rrms,
        moved.rrms
    );
    let (dt_x, dr_x) = pose_distance(&base.hand_eye, &moved.hand_eye);
    assert!(dt_x < 1e-6 && dr_x < 1e-6, "hand-eye moved: {dt_x}, {dr_x}");
    let expected_w = base.world_base.compose(&gauge.invert());
    let (dt_w, dr_w) = pose_distance(&expected_w, &moved.world_base);
    assert!(dt_w < 1e-6 && dr_w < 1e-6, "world pose inconsistent: {dt_w}, {dr_w}");
}

#[test]
fn zero_weight_masks_out_corrupted_observations() {
    let camera = intrinsics();
    let target = target();
    let x = hand_eye_truth();
    let w = world_base_truth();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let clean = make_shots(
        &diverse_stations(),
        &x,
        &w,
        &camera,
        &target,
        0.0,
        &mut rng,
    );
    // Blow up one observation in two shots, then weight those to zero.
    let corrupt: Vec<CalibrationShot> = clean
        .iter()
        .enumerate()
        .map(|(i, shot)| {
            let mut obs = shot.observations().to_vec();
            if i < 2 {
                obs[7].1.u += 400.0;
                obs[7].1.v -= 250.0;
            }
            CalibrationShot::new(shot.frame_id(), *shot.robot_pose(), obs, &target).unwrap()
        })
        .collect();
    let bad_point = corrupt[0].observations()[7].0;
    let options = RefineOptions {
        intrinsics_mask: IntrinsicsMask::none(),
        weight: Some(Box::new(move |frame_id: &str, point_id: u32| {
            if point_id == bad_point && (frame_id == "shot_000" || frame_id == "shot_001") {
                0.0
            } else {
                1.0
            }
        })),
        ..RefineOptions::default()
    };
    let initial = InitialEstimate {
        hand_eye: perturbed(&x, 0.01, 0.005, &mut rng),
        world_base: w,
        intrinsics: camera,
    };
    let result = refine(&corrupt, &target, &initial, &options).unwrap();
    let (dt_x, dr_x) = pose_distance(&result.hand_eye, &x);
    assert!(dt_x < 1e-7, "hand-eye translation error {dt_x}");
    assert!(dr_x < 1e-7, "hand-eye rotation error {dr_x}");
}

#[test]
fn target_and_shot_validation_reject_bad_input() {
    let good = target();
    // Too few points.
    assert!(CalibrationTarget::new(good.points()[..3].to_vec()).is_err());
    // Duplicate ids.
    let mut dup = good.points().to_vec();
    dup[1].point_id = dup[0].point_id;
    assert!(CalibrationTarget::new(dup).is_err());
    // Coplanar grid.
    let flat: Vec<TargetPoint> = good
        .points()
        .iter()
        .map(|p| TargetPoint { z: 0.0, ..*p })
        .collect();
    assert!(matches!(
        CalibrationTarget::new(flat),
        Err(CalibError::DegenerateConfiguration(_))
    ));

    let pose = RigidTransform::identity();
    let obs_ok = |n: usize| -> Vec<(u32, posechain_core::PixelPoint)> {
        (0..n as u32)
            .map(|i| (i, posechain_core::PixelPoint::new(10.0 * i as f64, 20.0)))
            .collect()
    };
    // Too few observations.
    assert!(CalibrationShot::new("s", pose, obs_ok(3), &good).is_err());
    // Unknown point id.
    let mut unknown = obs_ok(4);
    unknown[0].0 = 999;
    assert!(matches!(
        CalibrationShot::new("s", pose, unknown, &good),
        Err(CalibError::UnknownPointId { point_id: 999, .. })
    ));
    // Duplicated observation.
    let mut doubled = obs_ok(4);
    doubled[1].0 = doubled[0].0;
    assert!(CalibrationShot::new("s", pose, doubled, &good).is_err());
}
