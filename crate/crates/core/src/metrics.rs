//! Pose accuracy metrics: calibration-chain discrepancies, reprojection
//! RMS, trajectory alignment and repeatability statistics.
//!
//! Internally everything is meters and radians; the reported metrics follow
//! the usual conventions (RMST and translation errors in millimeters, RMSR
//! and rotation errors in degrees, reprojection RMS in pixels).

use crate::camera::{CameraError, CameraIntrinsics};
use crate::handeye::{camera_from_chain, CalibrationShot, CalibrationTarget};
use crate::se3::{mean_rotation, RigidTransform, SimilarityTransform};
use nalgebra::{DMatrix, Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Errors raised by metric computations.
#[derive(Debug, Error)]
pub enum MetricsError {
    /// No data to aggregate.
    #[error("input is empty")]
    EmptyInput,
    /// A frame referenced by the observations has no pose.
    #[error("no pose for frame {0}")]
    MissingPose(String),
    /// An observation references a point id absent from the target.
    #[error("unknown point id {point_id} in frame {frame_id}")]
    UnknownPointId {
        /// Frame the observation belongs to.
        frame_id: String,
        /// Offending point id.
        point_id: u32,
    },
    /// Camera-center geometry too degenerate to align.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    /// The two trajectories share no frame ids.
    #[error("trajectories share no frame ids")]
    NoSharedFrames,
    /// A repeatability group has fewer than two poses.
    #[error("group {0} has fewer than 2 poses")]
    GroupTooSmall(usize),
    /// A frame id occurs twice in one trajectory.
    #[error("duplicate frame id {0}")]
    DuplicateFrameId(String),
    /// A point could not be projected while evaluating reprojection RMS.
    #[error("projection failed in frame {frame_id}: {source}")]
    Projection {
        /// Frame the failure occurred in.
        frame_id: String,
        /// Underlying camera error.
        source: CameraError,
    },
}

/// An ordered set of labeled poses. The meaning of each pose (tool-in-base,
/// camera-in-world, world-to-camera) is fixed by the producer; alignment
/// and error metrics treat the translation component as the frame position,
/// which matches poses expressed in a common reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    entries: Vec<(String, RigidTransform)>,
}

/// Serialized form of one trajectory entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrajectoryEntry {
    frame_id: String,
    transform_matrix: RigidTransform,
}

impl Trajectory {
    /// Builds a trajectory, rejecting duplicate frame ids.
    pub fn new(entries: Vec<(String, RigidTransform)>) -> Result<Self, MetricsError> {
        let mut seen = std::collections::BTreeSet::new();
        for (id, _) in &entries {
            if !seen.insert(id.clone()) {
                return Err(MetricsError::DuplicateFrameId(id.clone()));
            }
        }
        Ok(Self { entries })
    }

    /// Number of poses.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Whether the trajectory holds no poses.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Iterates over (frame_id, pose) in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &(String, RigidTransform)> {
        self.entries.iter()
    }

    /// Looks up a pose by frame id.
    pub fn get(&self, frame_id: &str) -> Option<&RigidTransform> {
        self.entries
            .iter()
            .find(|(id, _)| id == frame_id)
            .map(|(_, pose)| pose)
    }

    /// Applies a function to every pose, keeping labels and order.
    pub fn map_poses(&self, f: impl Fn(&RigidTransform) -> RigidTransform) -> Trajectory {
        Trajectory {
            entries: self
                .entries
                .iter()
                .map(|(id, pose)| (id.clone(), f(pose)))
                .collect(),
        }
    }
}

impl Serialize for Trajectory {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<TrajectoryEntry> = self
            .entries
            .iter()
            .map(|(id, pose)| TrajectoryEntry {
                frame_id: id.clone(),
                transform_matrix: *pose,
            })
            .collect();
        entries.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Trajectory {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let entries = Vec::<TrajectoryEntry>::deserialize(deserializer)?;
        Trajectory::new(
            entries
                .into_iter()
                .map(|e| (e.frame_id, e.transform_matrix))
                .collect(),
        )
        .map_err(serde::de::Error::custom)
    }
}

/// Difference between an independently observed camera pose and the pose
/// predicted by the calibration chain for the same robot pose.
pub fn discrepancy(
    camera_pose: &RigidTransform,
    robot_pose: &RigidTransform,
    hand_eye: &RigidTransform,
    world_base: &RigidTransform,
) -> RigidTransform {
    let chain = camera_from_chain(robot_pose, hand_eye, world_base);
    chain.invert().compose(camera_pose)
}

/// Root-mean-square of discrepancy translations, in millimeters.
pub fn rmst(discrepancies: &[RigidTransform]) -> Result<f64, MetricsError> {
    if discrepancies.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let sum: f64 = discrepancies
        .iter()
        .map(|d| (d.translation_norm() * 1000.0).powi(2))
        .sum();
    Ok((sum / discrepancies.len() as f64).sqrt())
}

/// Root-mean-square of discrepancy rotation angles, in degrees.
pub fn rmsr(discrepancies: &[RigidTransform]) -> Result<f64, MetricsError> {
    if discrepancies.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let sum: f64 = discrepancies
        .iter()
        .map(|d| d.rotation_angle().to_degrees().powi(2))
        .sum();
    Ok((sum / discrepancies.len() as f64).sqrt())
}

/// Reprojection root-mean-square in pixels. For every shot the target
/// points are projected through the given world-to-camera pose; the squared
/// 2-norm of each 2D pixel residual is averaged per shot, those means are
/// averaged over shots, and the square root is reported.
pub fn rrms(
    shots: &[CalibrationShot],
    camera_poses: &Trajectory,
    intrinsics: &CameraIntrinsics,
    target: &CalibrationTarget,
) -> Result<f64, MetricsError> {
    if shots.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let pose_index: BTreeMap<&str, &RigidTransform> = camera_poses
        .iter()
        .map(|(id, pose)| (id.as_str(), pose))
        .collect();
    let mut shot_mean_sum = 0.0;
    for shot in shots {
        let pose = pose_index
            .get(shot.frame_id())
            .ok_or_else(|| MetricsError::MissingPose(shot.frame_id().to_string()))?;
        let mut squared_sum = 0.0;
        for (point_id, observed) in shot.observations() {
            let point = target
                .point(*point_id)
                .ok_or_else(|| MetricsError::UnknownPointId {
                    frame_id: shot.frame_id().to_string(),
                    point_id: *point_id,
                })?;
            let projected = intrinsics
                .project(&pose.transform_point(&point))
                .map_err(|source| MetricsError::Projection {
                    frame_id: shot.frame_id().to_string(),
                    source,
                })?;
            let du = observed.u - projected.u;
            let dv = observed.v - projected.v;
            squared_sum += du * du + dv * dv;
        }
        shot_mean_sum += squared_sum / shot.observations().len() as f64;
    }
    Ok((shot_mean_sum / shots.len() as f64).sqrt())
}

/// Shared frames of two trajectories, in source order.
fn shared_frames<'a>(
    source: &'a Trajectory,
    reference: &'a Trajectory,
) -> Vec<(&'a str, &'a RigidTransform, &'a RigidTransform)> {
    let ref_index: BTreeMap<&str, &RigidTransform> = reference
        .iter()
        .map(|(id, pose)| (id.as_str(), pose))
        .collect();
    source
        .iter()
        .filter_map(|(id, pose)| {
            ref_index
                .get(id.as_str())
                .map(|ref_pose| (id.as_str(), pose, *ref_pose))
        })
        .collect()
}

/// Ratio below which the second singular value marks a collinear point set.
const COLLINEARITY_RATIO: f64 = 1e-9;

fn check_not_collinear(centers: &[Vector3<f64>], label: &str) -> Result<(), MetricsError> {
    let n = centers.len() as f64;
    let mean: Vector3<f64> = centers.iter().sum::<Vector3<f64>>() / n;
    let mut m = DMatrix::zeros(3, centers.len());
    for (i, c) in centers.iter().enumerate() {
        m.set_column(i, &(c - mean));
    }
    let svd = m.svd(false, false);
    let s = &svd.singular_values;
    if s[0] <= 0.0 || s[1] < COLLINEARITY_RATIO * s[0] {
        return Err(MetricsError::DegenerateGeometry(format!(
            "{label} camera centers are collinear or coincident"
        )));
    }
    Ok(())
}

/// Closed-form least-squares similarity (or rigid, when `with_scale` is
/// false) mapping source camera centers onto reference centers over the
/// shared frames. Requires at least three shared, non-collinear centers.
pub fn umeyama_align(
    source: &Trajectory,
    reference: &Trajectory,
    with_scale: bool,
) -> Result<SimilarityTransform, MetricsError> {
    let shared = shared_frames(source, reference);
    if shared.len() < 3 {
        return Err(MetricsError::DegenerateGeometry(format!(
            "need at least 3 shared frames, got {}",
            shared.len()
        )));
    }
    let src: Vec<Vector3<f64>> = shared.iter().map(|(_, s, _)| s.translation()).collect();
    let dst: Vec<Vector3<f64>> = shared.iter().map(|(_, _, r)| r.translation()).collect();
    check_not_collinear(&src, "source")?;
    check_not_collinear(&dst, "reference")?;

    let n = src.len() as f64;
    let mu_src: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let mu_dst: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;

    let mut covariance = Matrix3::zeros();
    let mut src_variance = 0.0;
    for (s, d) in src.iter().zip(&dst) {
        let sc = s - mu_src;
        let dc = d - mu_dst;
        covariance += dc * sc.transpose();
        src_variance += sc.norm_squared();
    }
    covariance /= n;
    src_variance /= n;

    let svd = covariance.svd(true, true);
    let u = svd.u.expect("svd with u");
    let v_t = svd.v_t.expect("svd with v_t");
    let mut s_diag = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s_diag[(2, 2)] = -1.0;
    }
    let rotation_matrix = u * s_diag * v_t;
    let rotation = UnitQuaternion::from_rotation_matrix(
        &nalgebra::Rotation3::from_matrix_unchecked(rotation_matrix),
    );

    let scale = if with_scale {
        let d = svd.singular_values;
        (d[0] * s_diag[(0, 0)] + d[1] * s_diag[(1, 1)] + d[2] * s_diag[(2, 2)]) / src_variance
    } else {
        1.0
    };
    if !(scale.is_finite() && scale > 0.0) {
        return Err(MetricsError::DegenerateGeometry(format!(
            "alignment produced invalid scale {scale}"
        )));
    }

    let translation = mu_dst - scale * (rotation * mu_src);
    SimilarityTransform::new(scale, RigidTransform::new(rotation, translation))
        .map_err(|e| MetricsError::DegenerateGeometry(e.to_string()))
}

/// Per-frame error of one aligned pose pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameError {
    /// Frame the errors belong to.
    pub frame_id: String,
    /// Center distance after alignment, in millimeters.
    pub translation_error_mm: f64,
    /// Relative rotation angle after alignment, in degrees.
    pub rotation_error_deg: f64,
}

/// Absolute pose error of a trajectory against a reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseErrorReport {
    /// Mean translation error in millimeters.
    pub mte_mm: f64,
    /// Mean rotation error in degrees.
    pub mre_deg: f64,
    /// Errors per shared frame, in source order.
    pub per_frame: Vec<FrameError>,
    /// Alignment that was applied to the source trajectory.
    pub alignment: SimilarityTransform,
}

/// Applies an alignment to the source trajectory and reports per-frame and
/// mean errors against the reference over the shared frames.
pub fn absolute_pose_error(
    source: &Trajectory,
    reference: &Trajectory,
    alignment: &SimilarityTransform,
) -> Result<PoseErrorReport, MetricsError> {
    let shared = shared_frames(source, reference);
    if shared.is_empty() {
        return Err(MetricsError::NoSharedFrames);
    }
    let mut per_frame = Vec::with_capacity(shared.len());
    let mut te_sum = 0.0;
    let mut re_sum = 0.0;
    for (frame_id, src_pose, ref_pose) in shared {
        let aligned = alignment.transform_pose(src_pose);
        let te_mm = (aligned.translation() - ref_pose.translation()).norm() * 1000.0;
        let relative = RigidTransform::new(
            ref_pose.rotation().inverse() * aligned.rotation(),
            Vector3::zeros(),
        );
        let re_deg = relative.rotation_angle().to_degrees();
        te_sum += te_mm;
        re_sum += re_deg;
        per_frame.push(FrameError {
            frame_id: frame_id.to_string(),
            translation_error_mm: te_mm,
            rotation_error_deg: re_deg,
        });
    }
    let n = per_frame.len() as f64;
    Ok(PoseErrorReport {
        mte_mm: te_sum / n,
        mre_deg: re_sum / n,
        per_frame,
        alignment: *alignment,
    })
}

/// Pose repeatability over groups of repeated visits.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RepeatabilityStats {
    /// Sample standard deviation of tool centers, averaged over groups,
    /// in millimeters.
    pub sigma_translation_mm: f64,
    /// Sample standard deviation of rotation angles about the group mean,
    /// averaged over groups, in degrees.
    pub sigma_rotation_deg: f64,
}

/// Computes repeatability statistics. Every group must contain at least two
/// poses; per group the sample (n-1) standard deviation of the centers and
/// of the rotation angles about the chordal-mean rotation is taken, and the
/// per-group values are averaged.
pub fn repeatability_stats(
    groups: &[Vec<RigidTransform>],
) -> Result<RepeatabilityStats, MetricsError> {
    if groups.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut sigma_t_sum = 0.0;
    let mut sigma_r_sum = 0.0;
    for (index, group) in groups.iter().enumerate() {
        if group.len() < 2 {
            return Err(MetricsError::GroupTooSmall(index));
        }
        let n = group.len() as f64;
        let mean_center: Vector3<f64> =
            group.iter().map(|p| p.translation()).sum::<Vector3<f64>>() / n;
        let center_ss: f64 = group
            .iter()
            .map(|p| (p.translation() - mean_center).norm_squared())
            .sum();
        sigma_t_sum += (center_ss / (n - 1.0)).sqrt() * 1000.0;

        let rotations: Vec<UnitQuaternion<f64>> = group.iter().map(|p| p.rotation()).collect();
        let mean_rot = mean_rotation(&rotations);
        let angle_ss: f64 = rotations
            .iter()
            .map(|q| {
                RigidTransform::new(mean_rot.inverse() * q, Vector3::zeros())
                    .rotation_angle()
                    .powi(2)
            })
            .sum();
        sigma_r_sum += (angle_ss / (n - 1.0)).sqrt().to_degrees();
    }
    let g = groups.len() as f64;
    Ok(RepeatabilityStats {
        sigma_translation_mm: sigma_t_sum / g,
        sigma_rotation_deg: sigma_r_sum / g,
    })
}
