//! Geometry and calibration for a camera mounted on a robot arm: rigid
//! transforms, camera models, forward kinematics, the calibration solver
//! chain, trajectory metrics, view planning, and the file formats that
//! tie them together.

pub mod camera;
pub mod handeye;
pub mod io;
pub mod kinematics;
pub mod lm;
pub mod metrics;
pub mod planner;
pub mod se3;

pub use camera::{CameraError, CameraIntrinsics, PixelPoint};
pub use handeye::{
    apply_calibration, camera_from_chain, initialize, refine, CalibError, CalibrationResult,
    CalibrationShot, CalibrationTarget, InitialEstimate, IntrinsicsMask, RefineOptions,
    TargetPoint,
};
pub use kinematics::{batch_fk, DhChain, DhJoint, JointState, KinematicsError};
pub use lm::{LeastSquaresProblem, LmError, LmOptions, LmReport};
pub use metrics::{
    absolute_pose_error, discrepancy, repeatability_stats, rmsr, rmst, rrms, umeyama_align,
    FrameError, MetricsError, PoseErrorReport, RepeatabilityStats, Trajectory,
};
pub use planner::{hemisphere_poses, look_at, plan_views, HemispherePlan, PlannerError, ViewPlan};
pub use se3::{mean_rotation, RigidTransform, Se3Error, SimilarityTransform};
