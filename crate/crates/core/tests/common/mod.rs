//! Shared synthetic rig for the integration tests: a known hand-eye
//! transform, world pose, camera and target, with shots generated by
//! projecting the target through the exact chain.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use posechain_core::camera::{CameraIntrinsics, PixelPoint};
use posechain_core::handeye::{CalibrationShot, CalibrationTarget, TargetPoint};
use posechain_core::se3::RigidTransform;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 1400.0,
        fy: 1395.0,
        cx: 1427.5,
        cy: 1424.0,
        k1: -0.08,
        k2: 0.012,
        k3: -0.0004,
        p1: 0.0006,
        p2: -0.0004,
        width: 2855,
        height: 2848,
    }
}

/// 5x5 grid, 50 mm pitch, with a deterministic height profile so the
/// points are not coplanar.
pub fn target() -> CalibrationTarget {
    let mut points = Vec::with_capacity(25);
    for row in 0..5i32 {
        for col in 0..5i32 {
            let id = (row * 5 + col) as u32;
            points.push(TargetPoint {
                point_id: id,
                x: (col - 2) as f64 * 0.05,
                y: (row - 2) as f64 * 0.05,
                z: ((id as f64 * 0.7).sin()) * 0.012,
            });
        }
    }
    CalibrationTarget::new(points).unwrap()
}

/// Tool-from-camera ground truth.
pub fn hand_eye_truth() -> RigidTransform {
    RigidTransform::new(
        UnitQuaternion::from_euler_angles(0.12, -0.24, 1.35),
        Vector3::new(0.035, -0.02, 0.085),
    )
}

/// Base-from-world ground truth.
pub fn world_base_truth() -> RigidTransform {
    RigidTransform::new(
        UnitQuaternion::from_euler_angles(0.02, -0.015, 0.6),
        Vector3::new(0.45, -0.18, 0.12),
    )
}

/// World-to-camera pose looking from `position` at the origin, world z up.
pub fn look_at_origin(position: Vector3<f64>) -> RigidTransform {
    let z_c = (-position).normalize();
    let up = Vector3::z();
    let up_perp = up - up.dot(&z_c) * z_c;
    let y_c = -up_perp.normalize();
    let x_c = y_c.cross(&z_c);
    let r = Matrix3::from_rows(&[x_c.transpose(), y_c.transpose(), z_c.transpose()]);
    let rotation =
        UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(r));
    RigidTransform::new(rotation, -(r * position))
}

/// Camera positions spread over elevations and longitudes so relative
/// rotations span several axes.
pub fn diverse_stations() -> Vec<Vector3<f64>> {
    let radius = 0.6;
    let mut positions = Vec::new();
    for &elevation in &[40.0f64, 60.0, 80.0] {
        for &longitude in &[0.0f64, 90.0, 180.0, 270.0] {
            let e = elevation.to_radians();
            let l = longitude.to_radians();
            positions.push(
                radius * Vector3::new(e.cos() * l.cos(), e.cos() * l.sin(), e.sin()),
            );
        }
    }
    positions
}

/// `n` camera positions on a golden-angle spiral over the 35..80 degree
/// elevation band.
#[allow(dead_code)]
pub fn spiral_stations(n: usize) -> Vec<Vector3<f64>> {
    let radius = 0.6;
    let golden = 137.507764_f64;
    (0..n)
        .map(|k| {
            let e = (35.0 + 45.0 * k as f64 / (n.max(2) - 1) as f64).to_radians();
            let l = (k as f64 * golden).to_radians();
            radius * Vector3::new(e.cos() * l.cos(), e.cos() * l.sin(), e.sin())
        })
        .collect()
}

/// Camera positions on a single ring: every relative rotation shares one
/// axis, so the hand-eye rotation is unobservable from them.
#[allow(dead_code)]
pub fn single_ring_stations() -> Vec<Vector3<f64>> {
    let radius = 0.6;
    let e = 55.0f64.to_radians();
    (0..12)
        .map(|k| {
            let l = (k as f64 * 30.0).to_radians();
            radius * Vector3::new(e.cos() * l.cos(), e.cos() * l.sin(), e.sin())
        })
        .collect()
}

/// Robot pose that realizes a camera pose through the chain.
pub fn robot_pose_for(
    camera_pose: &RigidTransform,
    hand_eye: &RigidTransform,
    world_base: &RigidTransform,
) -> RigidTransform {
    world_base
        .compose(&camera_pose.invert())
        .compose(&hand_eye.invert())
}

/// Projects the full target through the chain at each station and packages
/// the result as calibration shots. `pixel_sigma_per_component` adds
/// Gaussian noise independently to u and v.
pub fn make_shots(
    stations: &[Vector3<f64>],
    hand_eye: &RigidTransform,
    world_base: &RigidTransform,
    camera: &CameraIntrinsics,
    target: &CalibrationTarget,
    pixel_sigma_per_component: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<CalibrationShot> {
    let noise = Normal::new(0.0, pixel_sigma_per_component.max(f64::MIN_POSITIVE)).unwrap();
    stations
        .iter()
        .enumerate()
        .map(|(index, position)| {
            let camera_pose = look_at_origin(*position);
            let robot_pose = robot_pose_for(&camera_pose, hand_eye, world_base);
            let observations: Vec<(u32, PixelPoint)> = target
                .points()
                .iter()
                .map(|p| {
                    let world = Vector3::new(p.x, p.y, p.z);
                    let mut px = camera
                        .project(&camera_pose.transform_point(&world))
                        .expect("fixture stations keep the target in front of the camera");
                    if pixel_sigma_per_component > 0.0 {
                        px.u += noise.sample(rng);
                        px.v += noise.sample(rng);
                    }
                    (p.point_id, px)
                })
                .collect();
            CalibrationShot::new(format!("shot_{index:03}"), robot_pose, observations, target)
                .unwrap()
        })
        .collect()
}

/// Translation (meters) and rotation (radians) distance between poses.
pub fn pose_distance(a: &RigidTransform, b: &RigidTransform) -> (f64, f64) {
    let delta = a.invert().compose(b);
    (delta.translation_norm(), delta.rotation_angle())
}

#[allow(dead_code)]
pub fn perturbed(pose: &RigidTransform, angle: f64, offset: f64, rng: &mut ChaCha8Rng) -> RigidTransform {
    let axis = Vector3::new(
        rng.random::<f64>() - 0.5,
        rng.random::<f64>() - 0.5,
        rng.random::<f64>() - 0.5,
    )
    .normalize();
    let direction = Vector3::new(
        rng.random::<f64>() - 0.5,
        rng.random::<f64>() - 0.5,
        rng.random::<f64>() - 0.5,
    )
    .normalize();
    let tweak = RigidTransform::new(
        UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle),
        direction * offset,
    );
    pose.compose(&tweak)
}
