//! Hand-eye calibration for a camera rigidly mounted on a robot tool.
//!
//! The calibration estimates the tool-to-camera transform together with the
//! pose of the calibration target's world frame in the robot base frame,
//! and optionally refines camera intrinsics. The closed chain ties the four
//! frames together: `base_from_world = base_from_tool * tool_from_camera *
//! camera_from_world` must hold for every shot, so the camera pose
//! predicted from a robot pose is
//! `camera_from_world = camera_from_tool * tool_from_base * base_from_world`.
//!
//! Estimation runs in two stages: a closed-form start (per-shot spatial
//! resection followed by a linear motion-pair solve for the hand-eye
//! transform) and a damped least-squares refinement over all parameters
//! that minimizes pixel reprojection error.

use crate::camera::{CameraIntrinsics, PixelPoint};
use crate::lm::{self, LeastSquaresProblem, LmError, LmOptions};
use crate::metrics::{self, MetricsError, Trajectory};
use crate::se3::{mean_rotation, RigidTransform};
use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum observations for the linear resection stage.
pub const MIN_PNP_POINTS: usize = 6;

/// Minimum observations per shot.
pub const MIN_SHOT_POINTS: usize = 4;

/// Relative motion rotations below this angle are skipped when pairing
/// shots for the linear hand-eye solve.
const MIN_MOTION_ANGLE: f64 = 1e-3;

/// Errors raised by the calibration operations.
#[derive(Debug, Error)]
pub enum CalibError {
    /// The observation geometry cannot constrain the requested estimate.
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    /// The shot set does not span enough rotation directions.
    #[error("insufficient motion: {0}")]
    InsufficientMotion(String),
    /// An observation references a point id absent from the target.
    #[error("unknown point id {point_id} in frame {frame_id}")]
    UnknownPointId {
        /// Frame the observation belongs to.
        frame_id: String,
        /// Offending point id.
        point_id: u32,
    },
    /// Shots, observations or targets fail a structural precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A frame with observations has no robot pose.
    #[error("no robot pose for frame {0}")]
    MissingPose(String),
    /// The refinement normal equations are singular.
    #[error(transparent)]
    Solver(#[from] LmError),
    /// A metric could not be evaluated on the refined estimate.
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One labeled reference point of the calibration object, in the world
/// frame attached to the object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetPoint {
    /// Identifier referenced by observations.
    pub point_id: u32,
    /// X coordinate in meters.
    pub x: f64,
    /// Y coordinate in meters.
    pub y: f64,
    /// Z coordinate in meters.
    pub z: f64,
}

/// The calibration object: labeled 3D points in the world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TargetPoint>", into = "Vec<TargetPoint>")]
pub struct CalibrationTarget {
    points: Vec<TargetPoint>,
}

impl CalibrationTarget {
    /// Builds a target from labeled points. Requires at least four points
    /// with unique ids that do not all lie in one plane, since coplanar
    /// point sets leave the linear resection underdetermined.
    pub fn new(points: Vec<TargetPoint>) -> Result<Self, CalibError> {
        if points.len() < 4 {
            return Err(CalibError::InvalidInput(format!(
                "target needs at least 4 points, got {}",
                points.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &points {
            if !seen.insert(p.point_id) {
                return Err(CalibError::InvalidInput(format!(
                    "duplicate point id {}",
                    p.point_id
                )));
            }
            if ![p.x, p.y, p.z].iter().all(|v| v.is_finite()) {
                return Err(CalibError::InvalidInput(format!(
                    "point {} has non-finite coordinates",
                    p.point_id
                )));
            }
        }
        let n = points.len() as f64;
        let mean = points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + Vector3::new(p.x, p.y, p.z))
            / n;
        let mut centered = DMatrix::zeros(3, points.len());
        for (i, p) in points.iter().enumerate() {
            centered.set_column(i, &(Vector3::new(p.x, p.y, p.z) - mean));
        }
        let s = centered.svd(false, false).singular_values;
        if s[0] <= 0.0 || s[2] < 1e-9 * s[0] {
            return Err(CalibError::DegenerateConfiguration(
                "target points are coplanar or collinear".into(),
            ));
        }
        Ok(Self { points })
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Whether the target has no points (never true for a constructed one).
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Point position by id.
    pub fn point(&self, point_id: u32) -> Option<Vector3<f64>> {
        self.points
            .iter()
            .find(|p| p.point_id == point_id)
            .map(|p| Vector3::new(p.x, p.y, p.z))
    }

    /// All points in declaration order.
    pub fn points(&self) -> &[TargetPoint] {
        &self.points
    }
}

impl TryFrom<Vec<TargetPoint>> for CalibrationTarget {
    type Error = CalibError;

    fn try_from(points: Vec<TargetPoint>) -> Result<Self, CalibError> {
        CalibrationTarget::new(points)
    }
}

impl From<CalibrationTarget> for Vec<TargetPoint> {
    fn from(target: CalibrationTarget) -> Self {
        target.points
    }
}

/// One calibration shot: the robot pose the image was taken at and the
/// pixel observations of target points.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationShot {
    frame_id: String,
    robot_pose: RigidTransform,
    observations: Vec<(u32, PixelPoint)>,
}

impl CalibrationShot {
    /// Builds a shot, validating that at least [`MIN_SHOT_POINTS`]
    /// observations exist, point ids are unique and all of them occur in
    /// the target.
    pub fn new(
        frame_id: impl Into<String>,
        robot_pose: RigidTransform,
        observations: Vec<(u32, PixelPoint)>,
        target: &CalibrationTarget,
    ) -> Result<Self, CalibError> {
        let frame_id = frame_id.into();
        if observations.len() < MIN_SHOT_POINTS {
            return Err(CalibError::InvalidInput(format!(
                "frame {frame_id} has {} observations, need at least {MIN_SHOT_POINTS}",
                observations.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (id, px) in &observations {
            if !seen.insert(*id) {
                return Err(CalibError::InvalidInput(format!(
                    "frame {frame_id} observes point {id} twice"
                )));
            }
            if !(px.u.is_finite() && px.v.is_finite()) {
                return Err(CalibError::InvalidInput(format!(
                    "frame {frame_id} has a non-finite observation of point {id}"
                )));
            }
            if target.point(*id).is_none() {
                return Err(CalibError::UnknownPointId {
                    frame_id,
                    point_id: *id,
                });
            }
        }
        Ok(Self {
            frame_id,
            robot_pose,
            observations,
        })
    }

    /// Frame label.
    pub fn frame_id(&self) -> &str {
        &self.frame_id
    }

    /// Robot tool pose (tool in base frame) for this shot.
    pub fn robot_pose(&self) -> &RigidTransform {
        &self.robot_pose
    }

    /// Pixel observations as (point_id, pixel).
    pub fn observations(&self) -> &[(u32, PixelPoint)] {
        &self.observations
    }
}

/// Starting point for the refinement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialEstimate {
    /// Tool-from-camera transform.
    pub hand_eye: RigidTransform,
    /// Base-from-world transform.
    pub world_base: RigidTransform,
    /// Intrinsics the refinement starts from.
    pub intrinsics: CameraIntrinsics,
}

/// Which intrinsic parameters the refinement may adjust.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicsMask {
    /// Focal length x.
    pub fx: bool,
    /// Focal length y.
    pub fy: bool,
    /// Principal point x.
    pub cx: bool,
    /// Principal point y.
    pub cy: bool,
    /// Radial term k1.
    pub k1: bool,
    /// Radial term k2.
    pub k2: bool,
    /// Radial term k3.
    pub k3: bool,
    /// Tangential term p1.
    pub p1: bool,
    /// Tangential term p2.
    pub p2: bool,
}

impl IntrinsicsMask {
    /// All nine parameters free.
    pub fn all() -> Self {
        Self {
            fx: true,
            fy: true,
            cx: true,
            cy: true,
            k1: true,
            k2: true,
            k3: true,
            p1: true,
            p2: true,
        }
    }

    /// All parameters frozen.
    pub fn none() -> Self {
        Self {
            fx: false,
            fy: false,
            cx: false,
            cy: false,
            k1: false,
            k2: false,
            k3: false,
            p1: false,
            p2: false,
        }
    }

    /// Focal lengths and principal point free, distortion frozen.
    pub fn affine_only() -> Self {
        Self {
            k1: false,
            k2: false,
            k3: false,
            p1: false,
            p2: false,
            ..Self::all()
        }
    }

    fn flags(&self) -> [bool; 9] {
        [
            self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.k3, self.p1, self.p2,
        ]
    }

    /// Number of free parameters.
    pub fn count(&self) -> usize {
        self.flags().iter().filter(|f| **f).count()
    }
}

/// Per-observation weight hook: maps (frame_id, point_id) to a scalar
/// weight multiplying that observation's squared residual.
pub type ObservationWeight = Box<dyn Fn(&str, u32) -> f64 + Send + Sync>;

/// Options for [`refine`].
pub struct RefineOptions {
    /// Intrinsics selection.
    pub intrinsics_mask: IntrinsicsMask,
    /// Solver schedule.
    pub lm: LmOptions,
    /// Optional per-observation weight.
    pub weight: Option<ObservationWeight>,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            intrinsics_mask: IntrinsicsMask::all(),
            lm: LmOptions::default(),
            weight: None,
        }
    }
}

impl std::fmt::Debug for RefineOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RefineOptions")
            .field("intrinsics_mask", &self.intrinsics_mask)
            .field("lm", &self.lm)
            .field("weight", &self.weight.as_ref().map(|_| "<fn>"))
            .finish()
    }
}

/// Refined calibration with its accompanying quality metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Tool-from-camera transform.
    pub hand_eye: RigidTransform,
    /// Base-from-world transform.
    pub world_base: RigidTransform,
    /// Refined intrinsics.
    pub intrinsics: CameraIntrinsics,
    /// Root-mean-square discrepancy translation against per-shot
    /// resection poses, in millimeters.
    pub rmst: f64,
    /// Root-mean-square discrepancy rotation, in degrees.
    pub rmsr: f64,
    /// Reprojection root-mean-square through the calibration chain,
    /// in pixels.
    pub rrms: f64,
    /// Accepted solver iterations.
    pub iterations: usize,
    /// Whether the solver met its relative cost tolerance.
    pub converged: bool,
}

impl CalibrationResult {
    /// Camera pose predicted by the chain for a robot pose.
    pub fn camera_pose(&self, robot_pose: &RigidTransform) -> RigidTransform {
        camera_from_chain(robot_pose, &self.hand_eye, &self.world_base)
    }
}

/// Camera-from-world pose predicted by the calibration chain:
/// `camera_from_tool * tool_from_base * base_from_world`.
pub fn camera_from_chain(
    robot_pose: &RigidTransform,
    hand_eye: &RigidTransform,
    world_base: &RigidTransform,
) -> RigidTransform {
    hand_eye
        .invert()
        .compose(&robot_pose.invert())
        .compose(world_base)
}

/// Applies a calibration to a robot pose, yielding the camera-from-world
/// pose for that shot.
pub fn apply_calibration(
    robot_pose: &RigidTransform,
    result: &CalibrationResult,
) -> RigidTransform {
    result.camera_pose(robot_pose)
}

/// Single-shot camera pose estimate.
#[derive(Debug, Clone, Copy)]
pub struct PnpEstimate {
    /// Camera-from-world pose minimizing reprojection error for the shot.
    pub pose: RigidTransform,
    /// Root-mean-square pixel residual over the shot's observations.
    pub rrms: f64,
}

/// Estimates the camera-from-world pose of one shot by direct linear
/// transformation on undistorted observations followed by a damped
/// least-squares refinement on the full distortion model.
pub fn pnp_pose(
    shot: &CalibrationShot,
    target: &CalibrationTarget,
    intrinsics: &CameraIntrinsics,
) -> Result<PnpEstimate, CalibError> {
    let observations = shot.observations();
    if observations.len() < MIN_PNP_POINTS {
        return Err(CalibError::DegenerateConfiguration(format!(
            "frame {} has {} observations, resection needs at least {MIN_PNP_POINTS}",
            shot.frame_id(),
            observations.len()
        )));
    }

    // Gather world points and undistorted normalized rays.
    let mut world = Vec::with_capacity(observations.len());
    let mut rays = Vec::with_capacity(observations.len());
    for (id, px) in observations {
        let point = target
            .point(*id)
            .ok_or_else(|| CalibError::UnknownPointId {
                frame_id: shot.frame_id().to_string(),
                point_id: *id,
            })?;
        let ray = intrinsics.undistort(px).map_err(|e| {
            CalibError::DegenerateConfiguration(format!(
                "frame {}: cannot undistort observation of point {id}: {e}",
                shot.frame_id()
            ))
        })?;
        world.push(point);
        rays.push(ray);
    }

    // Condition the linear system by normalizing the world points.
    let n = world.len() as f64;
    let centroid: Vector3<f64> = world.iter().sum::<Vector3<f64>>() / n;
    let spread = (world
        .iter()
        .map(|p| (p - centroid).norm_squared())
        .sum::<f64>()
        / n)
        .sqrt()
        .max(1e-12);

    let mut a = DMatrix::zeros(2 * world.len(), 12);
    for (i, (point, ray)) in world.iter().zip(&rays).enumerate() {
        let q = (point - centroid) / spread;
        let xh = [q.x, q.y, q.z, 1.0];
        for c in 0..4 {
            a[(2 * i, c)] = xh[c];
            a[(2 * i, 8 + c)] = -ray.x * xh[c];
            a[(2 * i + 1, 4 + c)] = xh[c];
            a[(2 * i + 1, 8 + c)] = -ray.y * xh[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let s = &svd.singular_values;
    if s[0] <= 0.0 || s[10] < 1e-10 * s[0] {
        return Err(CalibError::DegenerateConfiguration(format!(
            "frame {}: resection system is rank deficient",
            shot.frame_id()
        )));
    }
    let m_vec = v_t.row(11);
    let mut m = Matrix4::identity();
    for r in 0..3 {
        for c in 0..4 {
            m[(r, c)] = m_vec[4 * r + c];
        }
    }

    // Undo the world normalization: columns 0..3 scale by 1/spread, the
    // translation column absorbs the centroid shift.
    let a_block = m.fixed_view::<3, 3>(0, 0).into_owned();
    let t_col = m.fixed_view::<3, 1>(0, 3).into_owned();
    let a_unnorm = a_block / spread;
    let t_unnorm = t_col - a_unnorm * centroid;

    // Fix the global sign so depths come out positive.
    let mut positive = 0usize;
    for point in &world {
        if (a_unnorm * point + t_unnorm).z > 0.0 {
            positive += 1;
        }
    }
    let sign = if positive * 2 >= world.len() { 1.0 } else { -1.0 };
    let a_signed = a_unnorm * sign;
    let t_signed = t_unnorm * sign;

    // Orthogonal Procrustes on the rotation block.
    let svd_a = a_signed.svd(true, true);
    let u = svd_a.u.expect("svd with u");
    let v_t3 = svd_a.v_t.expect("svd with v_t");
    let mut s_diag = Matrix3::identity();
    if (u * v_t3).determinant() < 0.0 {
        s_diag[(2, 2)] = -1.0;
    }
    let rotation_matrix = u * s_diag * v_t3;
    let sv = svd_a.singular_values;
    let scale = (sv[0] + sv[1] + sv[2]) / 3.0;
    if !(scale.is_finite() && scale > 1e-12) {
        return Err(CalibError::DegenerateConfiguration(format!(
            "frame {}: resection produced a collapsed projection",
            shot.frame_id()
        )));
    }
    let rotation =
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rotation_matrix));
    let initial = RigidTransform::new(rotation, t_signed / scale);

    // Refine on the full distortion model.
    let problem = PnpProblem {
        world: &world,
        observed: observations,
        intrinsics,
    };
    let (pose, _) = lm::minimize(&problem, initial, &LmOptions::default())?;

    let mut squared = 0.0;
    for (point, (_, px)) in world.iter().zip(observations) {
        let projected = intrinsics
            .project(&pose.transform_point(point))
            .map_err(|e| {
                CalibError::DegenerateConfiguration(format!(
                    "frame {}: refined pose rejects projection: {e}",
                    shot.frame_id()
                ))
            })?;
        squared += (px.u - projected.u).powi(2) + (px.v - projected.v).powi(2);
    }
    Ok(PnpEstimate {
        pose,
        rrms: (squared / world.len() as f64).sqrt(),
    })
}

/// Residual magnitude used when a candidate state pushes a point behind
/// the camera; large enough that such steps always lose.
const PROJECTION_PENALTY: f64 = 1e6;

struct PnpProblem<'a> {
    world: &'a [Vector3<f64>],
    observed: &'a [(u32, PixelPoint)],
    intrinsics: &'a CameraIntrinsics,
}

impl LeastSquaresProblem for PnpProblem<'_> {
    type State = RigidTransform;

    fn dimension(&self) -> usize {
        6
    }

    fn residuals(&self, pose: &RigidTransform) -> DVector<f64> {
        let mut r = DVector::zeros(2 * self.world.len());
        for (i, (point, (_, px))) in self.world.iter().zip(self.observed).enumerate() {
            match self.intrinsics.project(&pose.transform_point(point)) {
                Ok(projected) => {
                    r[2 * i] = px.u - projected.u;
                    r[2 * i + 1] = px.v - projected.v;
                }
                Err(_) => {
                    r[2 * i] = PROJECTION_PENALTY;
                    r[2 * i + 1] = PROJECTION_PENALTY;
                }
            }
        }
        r
    }

    fn jacobian(&self, pose: &RigidTransform) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(2 * self.world.len(), 6);
        for (i, point) in self.world.iter().enumerate() {
            let p_cam = pose.transform_point(point);
            let Ok((_, full)) = self.intrinsics.project_with_jacobian(&p_cam) else {
                continue;
            };
            let j_point = full.fixed_view::<2, 3>(0, 0);
            // Left perturbation Exp(w, u) * pose: d(p_cam) = -[p_cam]x w + u,
            // residual = observed - projected.
            let skew = skew3(&p_cam);
            let d_rot = j_point * skew;
            for r in 0..2 {
                for c in 0..3 {
                    j[(2 * i + r, c)] = d_rot[(r, c)];
                    j[(2 * i + r, 3 + c)] = -j_point[(r, c)];
                }
            }
        }
        j
    }

    fn retract(&self, pose: &RigidTransform, step: &DVector<f64>) -> RigidTransform {
        let rotation = Vector3::new(step[0], step[1], step[2]);
        let translation = Vector3::new(step[3], step[4], step[5]);
        RigidTransform::from_axis_angle(rotation, translation).compose(pose)
    }
}

fn skew3(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Left-multiplication matrix of a quaternion in (w, x, y, z) ordering.
fn quat_left(q: &UnitQuaternion<f64>) -> Matrix4<f64> {
    let w = q.quaternion().scalar();
    let v = q.quaternion().imag();
    let mut m = Matrix4::zeros();
    m[(0, 0)] = w;
    for i in 0..3 {
        m[(0, 1 + i)] = -v[i];
        m[(1 + i, 0)] = v[i];
    }
    let block = Matrix3::identity() * w + skew3(&v);
    m.fixed_view_mut::<3, 3>(1, 1).copy_from(&block);
    m
}

/// Right-multiplication matrix of a quaternion in (w, x, y, z) ordering.
fn quat_right(q: &UnitQuaternion<f64>) -> Matrix4<f64> {
    let w = q.quaternion().scalar();
    let v = q.quaternion().imag();
    let mut m = Matrix4::zeros();
    m[(0, 0)] = w;
    for i in 0..3 {
        m[(0, 1 + i)] = -v[i];
        m[(1 + i, 0)] = v[i];
    }
    let block = Matrix3::identity() * w - skew3(&v);
    m.fixed_view_mut::<3, 3>(1, 1).copy_from(&block);
    m
}

/// Closed-form starting estimate: per-shot resection with the nominal
/// intrinsics, a linear motion-pair solve for the hand-eye transform, and
/// chain closure averaged over shots for the world pose.
pub fn initialize(
    shots: &[CalibrationShot],
    target: &CalibrationTarget,
    nominal_intrinsics: &CameraIntrinsics,
) -> Result<InitialEstimate, CalibError> {
    if shots.len() < 3 {
        return Err(CalibError::InsufficientMotion(format!(
            "need at least 3 shots, got {}",
            shots.len()
        )));
    }
    let camera_poses: Vec<RigidTransform> = shots
        .iter()
        .map(|shot| pnp_pose(shot, target, nominal_intrinsics).map(|e| e.pose))
        .collect::<Result<_, _>>()?;

    // Relative motions: A = tool motion, B = camera motion, A X = X B.
    let mut motions = Vec::new();
    for i in 0..shots.len() {
        for j in (i + 1)..shots.len() {
            let a = shots[j]
                .robot_pose()
                .invert()
                .compose(shots[i].robot_pose());
            let b = camera_poses[j].compose(&camera_poses[i].invert());
            if a.rotation_angle() > MIN_MOTION_ANGLE {
                motions.push((a, b));
            }
        }
    }
    if motions.is_empty() {
        return Err(CalibError::InsufficientMotion(
            "no shot pair rotates the tool".into(),
        ));
    }

    // The rotation axes must span at least two directions.
    let mut axes = DMatrix::zeros(3, motions.len());
    for (k, (a, _)) in motions.iter().enumerate() {
        let axis = a
            .rotation()
            .axis()
            .map(|ax| ax.into_inner())
            .unwrap_or_else(Vector3::zeros);
        axes.set_column(k, &axis);
    }
    let axis_sv = axes.svd(false, false).singular_values;
    if axis_sv[0] <= 0.0 || axis_sv[1] < 1e-6 * axis_sv[0] {
        return Err(CalibError::InsufficientMotion(
            "tool rotation axes are nearly parallel; the hand-eye rotation is unobservable".into(),
        ));
    }

    // Rotation: stack (L(q_a) - R(q_b)) q_x = 0 and take the null vector.
    let mut system = DMatrix::zeros(4 * motions.len(), 4);
    for (k, (a, b)) in motions.iter().enumerate() {
        let block = quat_left(&a.rotation()) - quat_right(&b.rotation());
        system.view_mut((4 * k, 0), (4, 4)).copy_from(&block);
    }
    let svd = system.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let q_row = v_t.row(3);
    let q_x = UnitQuaternion::new_normalize(nalgebra::Quaternion::new(
        q_row[0], q_row[1], q_row[2], q_row[3],
    ));

    // Translation: (R_a - I) t_x = R_x t_b - t_a for every motion pair.
    let r_x = q_x.to_rotation_matrix().into_inner();
    let mut lhs = DMatrix::zeros(3 * motions.len(), 3);
    let mut rhs = DVector::zeros(3 * motions.len());
    for (k, (a, b)) in motions.iter().enumerate() {
        let block = a.rotation_matrix() - Matrix3::identity();
        lhs.view_mut((3 * k, 0), (3, 3)).copy_from(&block);
        let r = r_x * b.translation() - a.translation();
        for i in 0..3 {
            rhs[3 * k + i] = r[i];
        }
    }
    let t_x = lhs
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| CalibError::DegenerateConfiguration(format!("hand-eye translation solve: {e}")))?;
    let hand_eye = RigidTransform::new(q_x, Vector3::new(t_x[0], t_x[1], t_x[2]));

    // World pose from chain closure, averaged over shots.
    let closures: Vec<RigidTransform> = shots
        .iter()
        .zip(&camera_poses)
        .map(|(shot, cam)| shot.robot_pose().compose(&hand_eye).compose(cam))
        .collect();
    let mean_translation =
        closures.iter().map(|c| c.translation()).sum::<Vector3<f64>>() / closures.len() as f64;
    let rotations: Vec<UnitQuaternion<f64>> = closures.iter().map(|c| c.rotation()).collect();
    let world_base = RigidTransform::new(mean_rotation(&rotations), mean_translation);

    Ok(InitialEstimate {
        hand_eye,
        world_base,
        intrinsics: *nominal_intrinsics,
    })
}

struct RefineState {
    hand_eye: RigidTransform,
    world_base: RigidTransform,
    intrinsics: CameraIntrinsics,
}

impl Clone for RefineState {
    fn clone(&self) -> Self {
        Self {
            hand_eye: self.hand_eye,
            world_base: self.world_base,
            intrinsics: self.intrinsics,
        }
    }
}

struct RefineProblem<'a> {
    shots: &'a [CalibrationShot],
    world_points: Vec<Vec<Vector3<f64>>>,
    weights: Vec<Vec<f64>>,
    mask_flags: [bool; 9],
    residual_count: usize,
}

impl RefineProblem<'_> {
    fn shot_chain(&self, state: &RefineState, shot: &CalibrationShot) -> RigidTransform {
        camera_from_chain(shot.robot_pose(), &state.hand_eye, &state.world_base)
    }
}

impl LeastSquaresProblem for RefineProblem<'_> {
    type State = RefineState;

    fn dimension(&self) -> usize {
        12 + self.mask_flags.iter().filter(|f| **f).count()
    }

    fn residuals(&self, state: &RefineState) -> DVector<f64> {
        let mut r = DVector::zeros(self.residual_count);
        let mut row = 0;
        for (shot, (points, weights)) in self
            .shots
            .iter()
            .zip(self.world_points.iter().zip(&self.weights))
        {
            let chain = self.shot_chain(state, shot);
            for ((point, weight), (_, px)) in
                points.iter().zip(weights).zip(shot.observations())
            {
                let sw = weight.sqrt();
                match state.intrinsics.project(&chain.transform_point(point)) {
                    Ok(projected) => {
                        r[row] = sw * (px.u - projected.u);
                        r[row + 1] = sw * (px.v - projected.v);
                    }
                    Err(_) => {
                        r[row] = sw * PROJECTION_PENALTY;
                        r[row + 1] = sw * PROJECTION_PENALTY;
                    }
                }
                row += 2;
            }
        }
        r
    }

    fn jacobian(&self, state: &RefineState) -> DMatrix<f64> {
        let dim = self.dimension();
        let mut j = DMatrix::zeros(self.residual_count, dim);
        let mut row = 0;
        for (shot, (points, weights)) in self
            .shots
            .iter()
            .zip(self.world_points.iter().zip(&self.weights))
        {
            let chain = self.shot_chain(state, shot);
            let chain_rotation = chain.rotation_matrix();
            for (point, weight) in points.iter().zip(weights) {
                let sw = weight.sqrt();
                let p_cam = chain.transform_point(point);
                let Ok((_, full)) = state.intrinsics.project_with_jacobian(&p_cam) else {
                    row += 2;
                    continue;
                };
                let j_point = full.fixed_view::<2, 3>(0, 0).into_owned();

                // Hand-eye perturbation X -> X * Exp(w, u):
                // d(p_cam) = [p_cam]x w - u, residual = obs - projected.
                let d_he_rot = -j_point * skew3(&p_cam);
                let d_he_trans = j_point;
                // World perturbation W -> W * Exp(w, u):
                // d(p_cam) = -R_chain [p_w]x w + R_chain u.
                let d_w_rot = j_point * chain_rotation * skew3(point);
                let d_w_trans = -j_point * chain_rotation;
                for r in 0..2 {
                    for c in 0..3 {
                        j[(row + r, c)] = sw * d_he_rot[(r, c)];
                        j[(row + r, 3 + c)] = sw * d_he_trans[(r, c)];
                        j[(row + r, 6 + c)] = sw * d_w_rot[(r, c)];
                        j[(row + r, 9 + c)] = sw * d_w_trans[(r, c)];
                    }
                }
                let mut col = 12;
                for (k, flag) in self.mask_flags.iter().enumerate() {
                    if *flag {
                        j[(row, col)] = -sw * full[(0, 3 + k)];
                        j[(row + 1, col)] = -sw * full[(1, 3 + k)];
                        col += 1;
                    }
                }
                row += 2;
            }
        }
        j
    }

    fn retract(&self, state: &RefineState, step: &DVector<f64>) -> RefineState {
        let hand_eye = state.hand_eye.compose(&RigidTransform::from_axis_angle(
            Vector3::new(step[0], step[1], step[2]),
            Vector3::new(step[3], step[4], step[5]),
        ));
        let world_base = state.world_base.compose(&RigidTransform::from_axis_angle(
            Vector3::new(step[6], step[7], step[8]),
            Vector3::new(step[9], step[10], step[11]),
        ));
        let mut intrinsics = state.intrinsics;
        let mut col = 12;
        let fields: [&mut f64; 9] = [
            &mut intrinsics.fx,
            &mut intrinsics.fy,
            &mut intrinsics.cx,
            &mut intrinsics.cy,
            &mut intrinsics.k1,
            &mut intrinsics.k2,
            &mut intrinsics.k3,
            &mut intrinsics.p1,
            &mut intrinsics.p2,
        ];
        for (field, flag) in fields.into_iter().zip(self.mask_flags) {
            if flag {
                *field += step[col];
                col += 1;
            }
        }
        RefineState {
            hand_eye,
            world_base,
            intrinsics,
        }
    }
}

/// Refines hand-eye, world pose and selected intrinsics by minimizing the
/// weighted pixel reprojection error over all shots, then evaluates the
/// standard quality metrics on the refined estimate.
pub fn refine(
    shots: &[CalibrationShot],
    target: &CalibrationTarget,
    initial: &InitialEstimate,
    options: &RefineOptions,
) -> Result<CalibrationResult, CalibError> {
    if shots.is_empty() {
        return Err(CalibError::InvalidInput("no shots".into()));
    }
    let mut world_points = Vec::with_capacity(shots.len());
    let mut weights = Vec::with_capacity(shots.len());
    let mut residual_count = 0;
    for shot in shots {
        let mut points = Vec::with_capacity(shot.observations().len());
        let mut shot_weights = Vec::with_capacity(shot.observations().len());
        for (id, _) in shot.observations() {
            let point = target
                .point(*id)
                .ok_or_else(|| CalibError::UnknownPointId {
                    frame_id: shot.frame_id().to_string(),
                    point_id: *id,
                })?;
            let weight = options
                .weight
                .as_ref()
                .map(|w| w(shot.frame_id(), *id))
                .unwrap_or(1.0);
            if !(weight.is_finite() && weight >= 0.0) {
                return Err(CalibError::InvalidInput(format!(
                    "weight for frame {} point {id} is invalid",
                    shot.frame_id()
                )));
            }
            points.push(point);
            shot_weights.push(weight);
        }
        residual_count += 2 * points.len();
        world_points.push(points);
        weights.push(shot_weights);
    }

    let problem = RefineProblem {
        shots,
        world_points,
        weights,
        mask_flags: options.intrinsics_mask.flags(),
        residual_count,
    };
    let state = RefineState {
        hand_eye: initial.hand_eye,
        world_base: initial.world_base,
        intrinsics: initial.intrinsics,
    };
    let (state, report) = lm::minimize(&problem, state, &options.lm)?;

    // Chain-predicted camera poses for the reprojection metric.
    let chain_trajectory = Trajectory::new(
        shots
            .iter()
            .map(|shot| {
                (
                    shot.frame_id().to_string(),
                    camera_from_chain(shot.robot_pose(), &state.hand_eye, &state.world_base),
                )
            })
            .collect(),
    )
    .map_err(CalibError::Metrics)?;
    let rrms = metrics::rrms(shots, &chain_trajectory, &state.intrinsics, target)?;

    // Discrepancy against independently resected per-shot poses.
    let mut discrepancies = Vec::new();
    for shot in shots {
        if shot.observations().len() < MIN_PNP_POINTS {
            continue;
        }
        let observed = pnp_pose(shot, target, &state.intrinsics)?.pose;
        discrepancies.push(metrics::discrepancy(
            &observed,
            shot.robot_pose(),
            &state.hand_eye,
            &state.world_base,
        ));
    }
    if discrepancies.is_empty() {
        return Err(CalibError::DegenerateConfiguration(
            "no shot has enough observations for pose resection".into(),
        ));
    }
    let rmst = metrics::rmst(&discrepancies)?;
    let rmsr = metrics::rmsr(&discrepancies)?;

    Ok(CalibrationResult {
        hand_eye: state.hand_eye,
        world_base: state.world_base,
        intrinsics: state.intrinsics,
        rmst,
        rmsr,
        rrms,
        iterations: report.iterations,
        converged: report.converged,
    })
}
