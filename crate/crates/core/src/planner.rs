//! View planning on a hemisphere: camera stations at fixed elevation rings,
//! each looking at a common center, converted to tool poses through the
//! calibrated chain.

use crate::metrics::{MetricsError, Trajectory};
use crate::se3::RigidTransform;
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised during view planning.
#[derive(Debug, Error)]
pub enum PlannerError {
    /// The requested ranges or step sizes produce no views.
    #[error("plan parameters produce no views: {0}")]
    EmptyRange(String),
    /// The up hint is parallel to the viewing direction.
    #[error("up hint is parallel to the viewing direction")]
    DegenerateUp,
    /// Trajectory assembly failed.
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Parameters of a hemispherical capture pattern.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HemispherePlan {
    /// Center of the hemisphere in world coordinates (meters).
    pub center: [f64; 3],
    /// Radius in meters.
    pub radius: f64,
    /// Lowest elevation ring in degrees above the horizon.
    pub min_elevation_deg: f64,
    /// Highest elevation ring in degrees above the horizon.
    pub max_elevation_deg: f64,
    /// Spacing between elevation rings in degrees.
    pub elevation_step_deg: f64,
    /// Spacing between stations along each ring in degrees.
    pub longitude_step_deg: f64,
    /// Camera mounted upside down: roll every view 180 degrees about its
    /// optical axis.
    #[serde(default)]
    pub upside_down: bool,
}

impl HemispherePlan {
    fn validate(&self) -> Result<(), PlannerError> {
        if !self.radius.is_finite() || self.radius <= 0.0 {
            return Err(PlannerError::EmptyRange(format!(
                "radius must be positive, got {}",
                self.radius
            )));
        }
        if !self.elevation_step_deg.is_finite() || self.elevation_step_deg <= 0.0 {
            return Err(PlannerError::EmptyRange(format!(
                "elevation step must be positive, got {}",
                self.elevation_step_deg
            )));
        }
        if !self.longitude_step_deg.is_finite()
            || self.longitude_step_deg <= 0.0
            || self.longitude_step_deg > 360.0
        {
            return Err(PlannerError::EmptyRange(format!(
                "longitude step must lie in (0, 360], got {}",
                self.longitude_step_deg
            )));
        }
        if self.max_elevation_deg < self.min_elevation_deg {
            return Err(PlannerError::EmptyRange(format!(
                "elevation range [{}, {}] is empty",
                self.min_elevation_deg, self.max_elevation_deg
            )));
        }
        if self.min_elevation_deg < 0.0 || self.max_elevation_deg > 90.0 {
            return Err(PlannerError::EmptyRange(format!(
                "elevations must lie in [0, 90], got [{}, {}]",
                self.min_elevation_deg, self.max_elevation_deg
            )));
        }
        Ok(())
    }

    /// Elevation ring values in degrees, inclusive of both ends when the
    /// step divides the range.
    pub fn elevations_deg(&self) -> Vec<f64> {
        let span = self.max_elevation_deg - self.min_elevation_deg;
        let count = (span / self.elevation_step_deg + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| self.min_elevation_deg + i as f64 * self.elevation_step_deg)
            .collect()
    }

    /// Longitude station values in degrees: multiples of the step in
    /// [0, 360), never including 360 itself.
    pub fn longitudes_deg(&self) -> Vec<f64> {
        let mut values = Vec::new();
        let mut k = 0u64;
        loop {
            let value = k as f64 * self.longitude_step_deg;
            if value >= 360.0 {
                break;
            }
            values.push(value);
            k += 1;
        }
        values
    }
}

/// A full set of planned camera poses plus the matching tool poses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewPlan {
    /// World-to-camera poses, one per station.
    pub camera_poses: Trajectory,
    /// Base-to-tool poses realizing those camera poses through the chain.
    pub tool_poses: Trajectory,
}

/// Builds a world-to-camera pose looking from `position` toward `target`.
///
/// The optical axis points at the target; the camera's up is aligned with
/// the component of `up_hint` orthogonal to the axis (image rows increase
/// downward, so the camera y axis is the negated up). `roll_180` spins the
/// image half a turn about the optical axis.
pub fn look_at(
    position: Vector3<f64>,
    target: Vector3<f64>,
    up_hint: Vector3<f64>,
    roll_180: bool,
) -> Result<RigidTransform, PlannerError> {
    let axis = target - position;
    if axis.norm() < 1e-12 {
        return Err(PlannerError::EmptyRange(
            "camera position coincides with the target".into(),
        ));
    }
    let z_c = axis.normalize();
    let up_perp = up_hint - up_hint.dot(&z_c) * z_c;
    if up_perp.norm() < 1e-9 {
        return Err(PlannerError::DegenerateUp);
    }
    let mut y_c = -up_perp.normalize();
    let mut x_c = y_c.cross(&z_c);
    if roll_180 {
        x_c = -x_c;
        y_c = -y_c;
    }
    let rotation_matrix = Matrix3::from_rows(&[x_c.transpose(), y_c.transpose(), z_c.transpose()]);
    let rotation = UnitQuaternion::from_rotation_matrix(
        &nalgebra::Rotation3::from_matrix_unchecked(rotation_matrix),
    );
    let translation = -(rotation_matrix * position);
    Ok(RigidTransform::new(rotation, translation))
}

/// Generates world-to-camera poses on the hemisphere, all looking at the
/// center. Frame ids are `r{elevation}_c{longitude}` with degree values
/// printed without trailing zeros.
pub fn hemisphere_poses(plan: &HemispherePlan) -> Result<Trajectory, PlannerError> {
    plan.validate()?;
    let center = Vector3::new(plan.center[0], plan.center[1], plan.center[2]);
    let elevations = plan.elevations_deg();
    let longitudes = plan.longitudes_deg();
    if elevations.is_empty() || longitudes.is_empty() {
        return Err(PlannerError::EmptyRange(
            "no stations in the requested ranges".into(),
        ));
    }
    let mut entries = Vec::with_capacity(elevations.len() * longitudes.len());
    for &elevation in &elevations {
        for &longitude in &longitudes {
            let e = elevation.to_radians();
            let l = longitude.to_radians();
            let offset = Vector3::new(e.cos() * l.cos(), e.cos() * l.sin(), e.sin());
            let position = center + plan.radius * offset;
            // Near the pole the world z axis is parallel to the view line;
            // fall back to the world x axis as the up hint.
            let up_hint = if (elevation - 90.0).abs() < 1e-9 {
                Vector3::x()
            } else {
                Vector3::z()
            };
            let pose = look_at(position, center, up_hint, plan.upside_down)?;
            entries.push((format!("r{elevation}_c{longitude}"), pose));
        }
    }
    Ok(Trajectory::new(entries)?)
}

/// Converts world-to-camera poses into base-to-tool poses through the
/// calibrated tool-to-camera transform and world-to-base transform.
pub fn tool_poses(
    camera_poses: &Trajectory,
    hand_eye: &RigidTransform,
    world_base: &RigidTransform,
) -> Trajectory {
    let x_inv = hand_eye.invert();
    camera_poses.map_poses(|pose| world_base.compose(&pose.invert()).compose(&x_inv))
}

/// Plans a hemisphere capture and realizes it as tool poses.
pub fn plan_views(
    plan: &HemispherePlan,
    hand_eye: &RigidTransform,
    world_base: &RigidTransform,
) -> Result<ViewPlan, PlannerError> {
    let camera_poses = hemisphere_poses(plan)?;
    let tool = tool_poses(&camera_poses, hand_eye, world_base);
    Ok(ViewPlan {
        camera_poses,
        tool_poses: tool,
    })
}
