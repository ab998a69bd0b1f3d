//! Synthetic capture rig: a DH-modeled arm with a camera on its flange
//! photographing a desk-scale calibration target. Observations are
//! projected analytically, so every downstream result can be checked
//! against the exact ground truth written alongside the dataset.

use nalgebra::{Unit, UnitQuaternion, Vector3};
use posechain_core::camera::CameraIntrinsics;
use posechain_core::handeye::{
    camera_from_chain, CalibError, CalibrationTarget, InitialEstimate, TargetPoint,
};
use posechain_core::io::{self, FormatError, ObservationRecord};
use posechain_core::kinematics::{DhChain, DhJoint, JointState, KinematicsError};
use posechain_core::metrics::{MetricsError, Trajectory};
use posechain_core::se3::RigidTransform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Errors raised while generating a synthetic dataset.
#[derive(Debug, Error)]
pub enum SynthError {
    /// The configuration cannot produce a dataset.
    #[error("config error: {0}")]
    Config(String),
    /// Kinematic chain failure.
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    /// Target or shot construction failure.
    #[error(transparent)]
    Calib(#[from] CalibError),
    /// Pose bookkeeping failure.
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    /// File output failure.
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Planar grid target with a small height profile so the points are not
/// coplanar.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TargetSpec {
    /// Grid rows.
    pub rows: usize,
    /// Grid columns.
    pub cols: usize,
    /// Point pitch in meters.
    pub pitch_m: f64,
    /// Height profile amplitude in meters.
    pub height_amplitude_m: f64,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            rows: 5,
            cols: 5,
            pitch_m: 0.05,
            height_amplitude_m: 0.012,
        }
    }
}

impl TargetSpec {
    /// Realizes the grid as labeled world-frame points centered on the
    /// world origin.
    pub fn build(&self) -> Result<CalibrationTarget, SynthError> {
        let mut points = Vec::with_capacity(self.rows * self.cols);
        for row in 0..self.rows {
            for col in 0..self.cols {
                let id = (row * self.cols + col) as u32;
                points.push(TargetPoint {
                    point_id: id,
                    x: (col as f64 - (self.cols as f64 - 1.0) / 2.0) * self.pitch_m,
                    y: (row as f64 - (self.rows as f64 - 1.0) / 2.0) * self.pitch_m,
                    z: (id as f64 * 0.7).sin() * self.height_amplitude_m,
                });
            }
        }
        Ok(CalibrationTarget::new(points)?)
    }
}

/// Noise magnitudes applied during capture. The pixel sigma is the RMS
/// magnitude of the 2D pixel error; each pixel component receives Gaussian
/// noise with standard deviation sigma / sqrt(2). The pose sigma_t is the
/// RMS 3D position error, applied per axis as sigma_t / sqrt(3).
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// RMS 2D pixel observation error, in pixels.
    #[serde(default)]
    pub pixel_sigma_px: f64,
    /// Joint angle repeatability, in radians, applied to each joint.
    #[serde(default)]
    pub joint_sigma_rad: f64,
    /// RMS tool position repeatability, in millimeters.
    #[serde(default)]
    pub pose_sigma_t_mm: f64,
    /// Tool rotation repeatability about a random axis, in degrees.
    #[serde(default)]
    pub pose_sigma_r_deg: f64,
}

impl NoiseSpec {
    fn validate(&self) -> Result<(), SynthError> {
        let all = [
            self.pixel_sigma_px,
            self.joint_sigma_rad,
            self.pose_sigma_t_mm,
            self.pose_sigma_r_deg,
        ];
        if all.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(SynthError::Config(format!(
                "noise sigmas must be finite and non-negative, got {all:?}"
            )));
        }
        Ok(())
    }
}

fn default_shots() -> usize {
    32
}

fn default_joint_spread() -> f64 {
    0.15
}

fn default_standoff() -> f64 {
    0.45
}

fn default_margin() -> f64 {
    40.0
}

fn default_max_attempts() -> usize {
    10_000
}

fn default_dh() -> DhChain {
    ur3e_chain()
}

fn default_home_joints() -> Vec<f64> {
    vec![0.3, -1.1, 1.0, -1.4, -FRAC_PI_2, 0.4]
}

fn default_hand_eye() -> RigidTransform {
    RigidTransform::new(
        UnitQuaternion::from_euler_angles(0.12, -0.24, 1.35),
        Vector3::new(0.035, -0.02, 0.085),
    )
}

fn default_intrinsics() -> CameraIntrinsics {
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

/// Denavit-Hartenberg parameters of a UR3e-class 6-axis arm.
pub fn ur3e_chain() -> DhChain {
    let joint = |a: f64, alpha: f64, d: f64| DhJoint {
        a,
        alpha,
        d,
        theta_offset: 0.0,
    };
    DhChain::new(vec![
        joint(0.0, FRAC_PI_2, 0.15185),
        joint(-0.24355, 0.0, 0.0),
        joint(-0.2132, 0.0, 0.0),
        joint(0.0, FRAC_PI_2, 0.13105),
        joint(0.0, -FRAC_PI_2, 0.08535),
        joint(0.0, 0.0, 0.0921),
    ])
    .expect("static chain parameters are valid")
}

/// Full description of the simulated rig. Every field has a default, so a
/// config file only needs to name what it overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Number of calibration shots to capture.
    pub shots: usize,
    /// Arm model.
    pub dh: DhChain,
    /// Joint angles of the home (target-centered) configuration, radians.
    pub home_joints: Vec<f64>,
    /// Uniform sampling half-range around home per joint, radians.
    pub joint_spread_rad: f64,
    /// True tool-from-camera transform.
    pub hand_eye: RigidTransform,
    /// True base-from-world transform. When absent it is derived so the
    /// home configuration views the target center at the standoff
    /// distance.
    pub world_base: Option<RigidTransform>,
    /// Camera-to-target distance used to derive `world_base`, meters.
    pub standoff_m: f64,
    /// True camera intrinsics.
    pub intrinsics: CameraIntrinsics,
    /// Calibration object geometry.
    pub target: TargetSpec,
    /// Capture noise magnitudes.
    pub noise: NoiseSpec,
    /// Required distance of projections from the image border, pixels.
    pub margin_px: f64,
    /// Sampling attempts allowed before giving up.
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            shots: default_shots(),
            dh: default_dh(),
            home_joints: default_home_joints(),
            joint_spread_rad: default_joint_spread(),
            hand_eye: default_hand_eye(),
            world_base: None,
            standoff_m: default_standoff(),
            intrinsics: default_intrinsics(),
            target: TargetSpec::default(),
            noise: NoiseSpec::default(),
            margin_px: default_margin(),
            max_attempts: default_max_attempts(),
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        if self.shots < 3 {
            return Err(SynthError::Config(format!(
                "need at least 3 shots for calibration, got {}",
                self.shots
            )));
        }
        if self.home_joints.len() != self.dh.dof() {
            return Err(SynthError::Config(format!(
                "home_joints has {} angles for a {}-joint chain",
                self.home_joints.len(),
                self.dh.dof()
            )));
        }
        if !(self.joint_spread_rad > 0.0 && self.joint_spread_rad.is_finite()) {
            return Err(SynthError::Config(format!(
                "joint_spread_rad must be positive, got {}",
                self.joint_spread_rad
            )));
        }
        if !(self.standoff_m > 0.0 && self.standoff_m.is_finite()) {
            return Err(SynthError::Config(format!(
                "standoff_m must be positive, got {}",
                self.standoff_m
            )));
        }
        if self.max_attempts == 0 {
            return Err(SynthError::Config("max_attempts must be positive".into()));
        }
        self.noise.validate()?;
        self.intrinsics
            .validate()
            .map_err(|e| SynthError::Config(e.to_string()))?;
        Ok(())
    }

    /// The base-from-world transform actually used: the configured one, or
    /// the derived placement that centers the target in the home view.
    pub fn resolved_world_base(&self) -> Result<RigidTransform, SynthError> {
        if let Some(w) = self.world_base {
            return Ok(w);
        }
        let home_tool = self.dh.forward_kinematics(&self.home_joints)?;
        // World-to-camera pose of the home view: the camera hovers at the
        // standoff distance looking straight down the world z axis.
        let home_view = RigidTransform::new(
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI),
            Vector3::new(0.0, 0.0, self.standoff_m),
        );
        Ok(home_tool.compose(&self.hand_eye).compose(&home_view))
    }
}

/// A generated dataset plus the exact truth behind it.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    /// Config with `world_base` resolved.
    pub config: SynthConfig,
    /// Seed the capture was drawn from.
    pub seed: u64,
    /// Sampling attempts consumed.
    pub attempts: usize,
    /// Commanded joint angles, one row per shot.
    pub joint_log: Vec<JointState>,
    /// Calibration object.
    pub target: CalibrationTarget,
    /// Noisy pixel observations of the target points.
    pub observations: Vec<ObservationRecord>,
    /// Datasheet-style starting intrinsics handed to the solver.
    pub nominal_intrinsics: CameraIntrinsics,
    /// True hand-eye, world-base and intrinsics.
    pub truth: InitialEstimate,
    /// Tool poses that actually generated the observations.
    pub robot_trajectory: Trajectory,
    /// World-to-camera poses that actually generated the observations.
    pub camera_trajectory: Trajectory,
}

fn normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * sigma
}

fn pose_noise(rng: &mut ChaCha8Rng, sigma_t_mm: f64, sigma_r_deg: f64) -> RigidTransform {
    let per_axis = sigma_t_mm / 1000.0 / 3.0_f64.sqrt();
    let t = Vector3::new(
        normal(rng, per_axis),
        normal(rng, per_axis),
        normal(rng, per_axis),
    );
    let raw_axis = Vector3::new(
        normal(rng, 1.0),
        normal(rng, 1.0),
        normal(rng, 1.0),
    );
    let axis = if raw_axis.norm() < 1e-12 {
        Vector3::z_axis()
    } else {
        Unit::new_normalize(raw_axis)
    };
    let angle = normal(rng, sigma_r_deg.to_radians());
    RigidTransform::new(UnitQuaternion::from_axis_angle(&axis, angle), t)
}

/// Generates a dataset. Runs with the same config and seed produce
/// identical output down to the byte.
pub fn generate(config: &SynthConfig, seed: u64) -> Result<SynthDataset, SynthError> {
    config.validate()?;
    let world_base = config.resolved_world_base()?;
    let target = config.target.build()?;
    let intrinsics = config.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let width = intrinsics.width as f64;
    let height = intrinsics.height as f64;
    let margin = config.margin_px;
    let pixel_component_sigma = config.noise.pixel_sigma_px / 2.0_f64.sqrt();

    let mut joint_log = Vec::with_capacity(config.shots);
    let mut robot_entries = Vec::with_capacity(config.shots);
    let mut camera_entries = Vec::with_capacity(config.shots);
    let mut observations = Vec::new();
    let mut attempts = 0;

    while joint_log.len() < config.shots {
        attempts += 1;
        if attempts > config.max_attempts {
            return Err(SynthError::Config(format!(
                "collected only {} of {} shots after {} attempts; widen the \
                 margins or reduce joint_spread_rad",
                joint_log.len(),
                config.shots,
                config.max_attempts
            )));
        }
        let commanded: Vec<f64> = config
            .home_joints
            .iter()
            .map(|q| q + (rng.random::<f64>() * 2.0 - 1.0) * config.joint_spread_rad)
            .collect();
        let actual: Vec<f64> = commanded
            .iter()
            .map(|q| q + normal(&mut rng, config.noise.joint_sigma_rad))
            .collect();
        let repeatability = pose_noise(
            &mut rng,
            config.noise.pose_sigma_t_mm,
            config.noise.pose_sigma_r_deg,
        );
        let robot_pose = config.dh.forward_kinematics(&actual)?.compose(&repeatability);
        let camera_pose = camera_from_chain(&robot_pose, &config.hand_eye, &world_base);

        let mut pixels = Vec::with_capacity(target.len());
        let mut visible = true;
        for point in target.points() {
            let p_cam = camera_pose.transform_point(&Vector3::new(point.x, point.y, point.z));
            match intrinsics.project(&p_cam) {
                Ok(px)
                    if px.u >= margin
                        && px.u <= width - margin
                        && px.v >= margin
                        && px.v <= height - margin =>
                {
                    pixels.push((point.point_id, px));
                }
                _ => {
                    visible = false;
                    break;
                }
            }
        }
        if !visible {
            continue;
        }

        let frame_id = format!("s{:03}", joint_log.len());
        for (point_id, mut px) in pixels {
            px.u += normal(&mut rng, pixel_component_sigma);
            px.v += normal(&mut rng, pixel_component_sigma);
            observations.push(ObservationRecord {
                frame_id: frame_id.clone(),
                point_id,
                pixel: px,
            });
        }
        joint_log.push(JointState::new(frame_id.clone(), commanded));
        robot_entries.push((frame_id.clone(), robot_pose));
        camera_entries.push((frame_id, camera_pose));
    }

    let mut nominal_intrinsics = intrinsics;
    nominal_intrinsics.fx *= 1.015;
    nominal_intrinsics.cx += 5.0;
    nominal_intrinsics.k1 = 0.0;
    nominal_intrinsics.k2 = 0.0;
    nominal_intrinsics.k3 = 0.0;
    nominal_intrinsics.p1 = 0.0;
    nominal_intrinsics.p2 = 0.0;

    let mut resolved = config.clone();
    resolved.world_base = Some(world_base);

    Ok(SynthDataset {
        config: resolved,
        seed,
        attempts,
        joint_log,
        target,
        observations,
        nominal_intrinsics,
        truth: InitialEstimate {
            hand_eye: config.hand_eye,
            world_base,
            intrinsics,
        },
        robot_trajectory: Trajectory::new(robot_entries)?,
        camera_trajectory: Trajectory::new(camera_entries)?,
    })
}

/// Record written to synth_config.json so a dataset is reproducible from
/// its own output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthRunRecord {
    /// Seed used for the capture.
    pub seed: u64,
    /// Fully resolved configuration.
    pub config: SynthConfig,
}

impl SynthDataset {
    /// Writes the dataset into a directory under fixed file names and
    /// returns the written paths.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>, SynthError> {
        std::fs::create_dir_all(dir).map_err(|e| {
            SynthError::Config(format!("cannot create {}: {e}", dir.display()))
        })?;
        let path = |name: &str| dir.join(name);
        let record = SynthRunRecord {
            seed: self.seed,
            config: self.config.clone(),
        };
        io::write_json(&path("synth_config.json"), &record)?;
        io::write_dh_chain(&path("dh_chain.json"), &self.config.dh)?;
        io::write_target(&path("target.json"), &self.target)?;
        io::write_joint_log(&path("joint_log.csv"), &self.joint_log)?;
        io::write_observations(&path("observations.csv"), &self.observations)?;
        io::write_intrinsics(&path("nominal_intrinsics.json"), &self.nominal_intrinsics)?;
        io::write_json(&path("gt_calibration.json"), &self.truth)?;
        io::write_trajectory(&path("gt_robot_trajectory.json"), &self.robot_trajectory)?;
        io::write_trajectory(&path("gt_camera_trajectory.json"), &self.camera_trajectory)?;
        Ok([
            "synth_config.json",
            "dh_chain.json",
            "target.json",
            "joint_log.csv",
            "observations.csv",
            "nominal_intrinsics.json",
            "gt_calibration.json",
            "gt_robot_trajectory.json",
            "gt_camera_trajectory.json",
        ]
        .iter()
        .map(|name| path(name))
        .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_generates_the_requested_shots() {
        let config = SynthConfig::default();
        let data = generate(&config, 7).unwrap();
        assert_eq!(data.joint_log.len(), 32);
        assert_eq!(data.robot_trajectory.len(), 32);
        assert_eq!(data.camera_trajectory.len(), 32);
        assert_eq!(data.observations.len(), 32 * 25);
        assert!(data.attempts >= 32);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let config = SynthConfig::default();
        let a = generate(&config, 11).unwrap();
        let b = generate(&config, 11).unwrap();
        assert_eq!(a.joint_log, b.joint_log);
        assert_eq!(a.observations.len(), b.observations.len());
        for (x, y) in a.observations.iter().zip(&b.observations) {
            assert_eq!(x.frame_id, y.frame_id);
            assert_eq!(x.pixel.u.to_bits(), y.pixel.u.to_bits());
            assert_eq!(x.pixel.v.to_bits(), y.pixel.v.to_bits());
        }
        let c = generate(&config, 12).unwrap();
        assert_ne!(
            a.observations[0].pixel.u.to_bits(),
            c.observations[0].pixel.u.to_bits()
        );
    }

    #[test]
    fn noiseless_observations_reproject_exactly_from_commanded_joints() {
        let config = SynthConfig::default();
        let data = generate(&config, 3).unwrap();
        // Zero noise: commanded joints are the actual joints, so the chain
        // through the truth reprojects every observation exactly.
        for state in &data.joint_log {
            let tool = config.dh.forward_kinematics(&state.angles).unwrap();
            let cam = camera_from_chain(&tool, &data.truth.hand_eye, &data.truth.world_base);
            for record in data
                .observations
                .iter()
                .filter(|r| r.frame_id == state.frame_id)
            {
                let point = data.target.point(record.point_id).unwrap();
                let px = data
                    .truth
                    .intrinsics
                    .project(&cam.transform_point(&point))
                    .unwrap();
                assert!((px.u - record.pixel.u).abs() < 1e-9);
                assert!((px.v - record.pixel.v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn home_configuration_centers_the_target() {
        let config = SynthConfig::default();
        let world_base = config.resolved_world_base().unwrap();
        let tool = config.dh.forward_kinematics(&config.home_joints).unwrap();
        let cam = camera_from_chain(&tool, &config.hand_eye, &world_base);
        let center = cam.transform_point(&Vector3::zeros());
        assert!((center.x.abs()) < 1e-12);
        assert!((center.y.abs()) < 1e-12);
        assert!((center.z - config.standoff_m).abs() < 1e-12);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut config = SynthConfig::default();
        config.shots = 2;
        assert!(matches!(generate(&config, 1), Err(SynthError::Config(_))));

        let mut config = SynthConfig::default();
        config.home_joints = vec![0.0; 3];
        assert!(matches!(generate(&config, 1), Err(SynthError::Config(_))));

        let mut config = SynthConfig::default();
        config.noise.pixel_sigma_px = -0.1;
        assert!(matches!(generate(&config, 1), Err(SynthError::Config(_))));

        let mut config = SynthConfig::default();
        config.joint_spread_rad = 3.0;
        config.max_attempts = 50;
        assert!(matches!(generate(&config, 1), Err(SynthError::Config(_))));
    }
}
