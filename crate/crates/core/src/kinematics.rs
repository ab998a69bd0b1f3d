//! Forward kinematics for serial arms described by standard
//! Denavit-Hartenberg parameters.
//!
//! Each joint contributes `RotZ(theta + offset) * TransZ(d) * TransX(a) *
//! RotX(alpha)` with the link frame attached distally. Joint angles are in
//! radians.

use crate::metrics::Trajectory;
use crate::se3::RigidTransform;
use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by kinematics operations.
#[derive(Debug, Error)]
pub enum KinematicsError {
    /// Joint vector length does not match the chain.
    #[error("expected {expected} joint angles, got {got}{}", frame_id.as_ref().map(|f| format!(" (frame {f})")).unwrap_or_default())]
    DimensionMismatch {
        /// Number of joints in the chain.
        expected: usize,
        /// Number of angles supplied.
        got: usize,
        /// Frame the mismatch occurred in, when batch processing.
        frame_id: Option<String>,
    },
    /// The chain definition is unusable.
    #[error("invalid chain: {0}")]
    InvalidChain(String),
}

/// Standard DH parameters of one revolute joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhJoint {
    /// Link length along the joint x axis, in meters.
    pub a: f64,
    /// Link twist about the joint x axis, in radians.
    pub alpha: f64,
    /// Link offset along the joint z axis, in meters.
    pub d: f64,
    /// Constant added to the joint angle, in radians.
    pub theta_offset: f64,
}

impl DhJoint {
    /// Rigid transform contributed by this joint at angle `theta`.
    pub fn transform(&self, theta: f64) -> RigidTransform {
        let angle = theta + self.theta_offset;
        let rot_z = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle);
        let rot_x = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.alpha);
        let translation = rot_z * Vector3::new(self.a, 0.0, self.d);
        RigidTransform::new(rot_z * rot_x, translation)
    }
}

/// A serial chain of revolute DH joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DhJoint>", into = "Vec<DhJoint>")]
pub struct DhChain {
    joints: Vec<DhJoint>,
}

impl TryFrom<Vec<DhJoint>> for DhChain {
    type Error = KinematicsError;

    fn try_from(joints: Vec<DhJoint>) -> Result<Self, KinematicsError> {
        DhChain::new(joints)
    }
}

impl From<DhChain> for Vec<DhJoint> {
    fn from(chain: DhChain) -> Self {
        chain.joints
    }
}

impl DhChain {
    /// Builds a chain, requiring at least one joint and finite parameters.
    pub fn new(joints: Vec<DhJoint>) -> Result<Self, KinematicsError> {
        if joints.is_empty() {
            return Err(KinematicsError::InvalidChain("chain has no joints".into()));
        }
        for (i, j) in joints.iter().enumerate() {
            let finite =
                j.a.is_finite() && j.alpha.is_finite() && j.d.is_finite() && j.theta_offset.is_finite();
            if !finite {
                return Err(KinematicsError::InvalidChain(format!(
                    "joint {i} has non-finite parameters"
                )));
            }
        }
        Ok(Self { joints })
    }

    /// Number of joints.
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Joint parameters.
    pub fn joints(&self) -> &[DhJoint] {
        &self.joints
    }

    /// Base-to-tool pose for one joint configuration.
    pub fn forward_kinematics(&self, angles: &[f64]) -> Result<RigidTransform, KinematicsError> {
        if angles.len() != self.joints.len() {
            return Err(KinematicsError::DimensionMismatch {
                expected: self.joints.len(),
                got: angles.len(),
                frame_id: None,
            });
        }
        let mut pose = RigidTransform::identity();
        for (joint, &theta) in self.joints.iter().zip(angles) {
            pose = pose.compose(&joint.transform(theta));
        }
        Ok(pose)
    }
}

/// One line of a joint log: a frame label and the joint angles read at it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    /// Frame label, unique within a log.
    pub frame_id: String,
    /// Joint angles in radians.
    pub angles: Vec<f64>,
}

impl JointState {
    /// Builds a joint state.
    pub fn new(frame_id: impl Into<String>, angles: Vec<f64>) -> Self {
        Self {
            frame_id: frame_id.into(),
            angles,
        }
    }
}

/// Runs forward kinematics over a whole joint log, preserving input order.
pub fn batch_fk(chain: &DhChain, states: &[JointState]) -> Result<Trajectory, KinematicsError> {
    let mut entries = Vec::with_capacity(states.len());
    for state in states {
        if state.angles.len() != chain.dof() {
            return Err(KinematicsError::DimensionMismatch {
                expected: chain.dof(),
                got: state.angles.len(),
                frame_id: Some(state.frame_id.clone()),
            });
        }
        let pose = chain.forward_kinematics(&state.angles)?;
        entries.push((state.frame_id.clone(), pose));
    }
    Trajectory::new(entries)
        .map_err(|e| KinematicsError::InvalidChain(format!("joint log rejected: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix4;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::FRAC_PI_2;

    fn two_link_planar() -> DhChain {
        DhChain::new(vec![
            DhJoint {
                a: 1.0,
                alpha: 0.0,
                d: 0.0,
                theta_offset: 0.0,
            },
            DhJoint {
                a: 1.0,
                alpha: 0.0,
                d: 0.0,
                theta_offset: 0.0,
            },
        ])
        .unwrap()
    }

    fn ur3e() -> DhChain {
        DhChain::new(vec![
            DhJoint { a: 0.0, alpha: FRAC_PI_2, d: 0.15185, theta_offset: 0.0 },
            DhJoint { a: -0.24355, alpha: 0.0, d: 0.0, theta_offset: 0.0 },
            DhJoint { a: -0.2132, alpha: 0.0, d: 0.0, theta_offset: 0.0 },
            DhJoint { a: 0.0, alpha: FRAC_PI_2, d: 0.13105, theta_offset: 0.0 },
            DhJoint { a: 0.0, alpha: -FRAC_PI_2, d: 0.08535, theta_offset: 0.0 },
            DhJoint { a: 0.0, alpha: 0.0, d: 0.0921, theta_offset: 0.0 },
        ])
        .unwrap()
    }

    /// Dense-matrix oracle: the textbook 4x4 DH matrix per joint.
    fn dh_matrix(j: &DhJoint, theta: f64) -> Matrix4<f64> {
        let t = theta + j.theta_offset;
        let (st, ct) = t.sin_cos();
        let (sa, ca) = j.alpha.sin_cos();
        Matrix4::new(
            ct, -st * ca, st * sa, j.a * ct,
            st, ct * ca, -ct * sa, j.a * st,
            0.0, sa, ca, j.d,
            0.0, 0.0, 0.0, 1.0,
        )
    }

    #[test]
    fn all_zero_angles_give_product_of_offset_transforms() {
        let chain = ur3e();
        let zeros = vec![0.0; 6];
        let fk = chain.forward_kinematics(&zeros).unwrap().to_matrix();
        let mut oracle = Matrix4::identity();
        for j in chain.joints() {
            oracle *= dh_matrix(j, 0.0);
        }
        assert!((fk - oracle).norm() < 1e-12);
    }

    #[test]
    fn matches_dense_matrix_product_oracle() {
        let chain = ur3e();
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..200 {
            let q: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let fk = chain.forward_kinematics(&q).unwrap().to_matrix();
            let mut oracle = Matrix4::identity();
            for (j, &theta) in chain.joints().iter().zip(&q) {
                oracle *= dh_matrix(j, theta);
            }
            assert!(
                (fk - oracle).norm() < 1e-10,
                "mismatch {}",
                (fk - oracle).norm()
            );
        }
    }

    #[test]
    fn two_link_planar_endpoints() {
        let chain = two_link_planar();
        // Stretched out along x.
        let pose = chain.forward_kinematics(&[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(pose.translation().x, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pose.translation().y, 0.0, epsilon = 1e-12);
        // Elbow bent 90 degrees.
        let pose = chain.forward_kinematics(&[0.0, FRAC_PI_2]).unwrap();
        assert_abs_diff_eq!(pose.translation().x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pose.translation().y, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let chain = two_link_planar();
        let err = chain.forward_kinematics(&[0.1]).unwrap_err();
        assert!(matches!(
            err,
            KinematicsError::DimensionMismatch {
                expected: 2,
                got: 1,
                ..
            }
        ));
        let err = batch_fk(
            &chain,
            &[JointState::new("f0", vec![0.1, 0.2, 0.3])],
        )
        .unwrap_err();
        match err {
            KinematicsError::DimensionMismatch { frame_id, .. } => {
                assert_eq!(frame_id.as_deref(), Some("f0"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn joint_perturbation_changes_pose_smoothly() {
        let chain = ur3e();
        let q0: Vec<f64> = vec![0.3, -1.1, 0.7, 0.2, 1.4, -0.5];
        let base = chain.forward_kinematics(&q0).unwrap();
        let eps = 1e-8;
        for joint in 0..6 {
            let mut q = q0.clone();
            q[joint] += eps;
            let moved = chain.forward_kinematics(&q).unwrap();
            let delta = base.invert().compose(&moved);
            // Displacement must be O(eps): bounded by eps times the maximum
            // possible lever arm of the chain (sum of |a| + |d| is < 1 m).
            assert!(delta.translation_norm() < 10.0 * eps);
            assert!(delta.rotation_angle() < 10.0 * eps);

            // And first-order consistent with a central difference.
            let mut qb = q0.clone();
            qb[joint] -= eps;
            let back = chain.forward_kinematics(&qb).unwrap();
            let fd = (moved.translation() - back.translation()) / (2.0 * eps);
            let half = (moved.translation() - base.translation()) / eps;
            assert!((fd - half).norm() < 1e-5 * fd.norm().max(1.0));
        }
    }

    #[test]
    fn batch_fk_preserves_order_and_ids() {
        let chain = two_link_planar();
        let states = vec![
            JointState::new("b", vec![0.1, 0.2]),
            JointState::new("a", vec![0.3, 0.4]),
        ];
        let traj = batch_fk(&chain, &states).unwrap();
        let ids: Vec<_> = traj.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, vec!["b", "a"]);
    }

    #[test]
    fn rejects_empty_chain() {
        assert!(DhChain::new(vec![]).is_err());
    }
}
