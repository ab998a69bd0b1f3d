//! File formats shared by the tools: joint logs and observations as CSV,
//! DH chains, targets, trajectories and intrinsics as JSON.
//!
//! All writes go through a temp-file-and-rename so partially written files
//! never appear under the final name.

use crate::camera::{CameraIntrinsics, PixelPoint};
use crate::handeye::{CalibError, CalibrationShot, CalibrationTarget};
use crate::kinematics::{DhChain, JointState};
use crate::metrics::{FrameError, Trajectory};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Errors raised by file reading and writing.
#[derive(Debug, Error)]
pub enum FormatError {
    /// A line of a CSV file could not be parsed.
    #[error("{path}:{line}: {message}")]
    Parse {
        /// File the error occurred in.
        path: String,
        /// 1-based line number.
        line: u64,
        /// What went wrong.
        message: String,
    },
    /// Underlying I/O failure.
    #[error("{path}: {source}")]
    Io {
        /// File involved.
        path: String,
        /// Cause.
        source: std::io::Error,
    },
    /// JSON decoding failed or the decoded value violated an invariant.
    #[error("{path}: {message}")]
    Invalid {
        /// File involved.
        path: String,
        /// What went wrong.
        message: String,
    },
}

impl FormatError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn invalid(path: &Path, message: impl std::fmt::Display) -> Self {
        Self::Invalid {
            path: path.display().to_string(),
            message: message.to_string(),
        }
    }

    fn parse(path: &Path, line: u64, message: impl std::fmt::Display) -> Self {
        Self::Parse {
            path: path.display().to_string(),
            line,
            message: message.to_string(),
        }
    }
}

/// Writes bytes atomically: the content lands in a sibling temp file that
/// is renamed over the destination once fully written.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| FormatError::invalid(path, "path has no file name"))?;
    let tmp = parent.join(format!(
        ".{}.tmp-{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        Ok(())
    };
    write().map_err(|e| FormatError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| FormatError::io(path, e))
}

/// Serializes a value as pretty JSON and writes it atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| FormatError::invalid(path, format!("serialization failed: {e}")))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Reads and deserializes a JSON file.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| FormatError::invalid(path, e))
}

/// Reads a trajectory JSON file.
pub fn read_trajectory(path: &Path) -> Result<Trajectory, FormatError> {
    read_json(path)
}

/// Writes a trajectory JSON file.
pub fn write_trajectory(path: &Path, trajectory: &Trajectory) -> Result<(), FormatError> {
    write_json(path, trajectory)
}

/// Reads a DH chain JSON file.
pub fn read_dh_chain(path: &Path) -> Result<DhChain, FormatError> {
    read_json(path)
}

/// Writes a DH chain JSON file.
pub fn write_dh_chain(path: &Path, chain: &DhChain) -> Result<(), FormatError> {
    write_json(path, chain)
}

/// Reads a calibration target JSON file.
pub fn read_target(path: &Path) -> Result<CalibrationTarget, FormatError> {
    read_json(path)
}

/// Writes a calibration target JSON file.
pub fn write_target(path: &Path, target: &CalibrationTarget) -> Result<(), FormatError> {
    write_json(path, target)
}

/// Reads intrinsics from JSON and validates them.
pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics, FormatError> {
    let intrinsics: CameraIntrinsics = read_json(path)?;
    intrinsics
        .validate()
        .map_err(|e| FormatError::invalid(path, e))?;
    Ok(intrinsics)
}

/// Writes intrinsics as JSON.
pub fn write_intrinsics(path: &Path, intrinsics: &CameraIntrinsics) -> Result<(), FormatError> {
    write_json(path, intrinsics)
}

/// Reads a joint log CSV with header `frame_id,q1,...,qn`.
pub fn read_joint_log(path: &Path) -> Result<Vec<JointState>, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| FormatError::invalid(path, e))?;
    let headers = reader
        .headers()
        .map_err(|e| FormatError::invalid(path, e))?
        .clone();
    if headers.len() < 2 || headers.get(0) != Some("frame_id") {
        return Err(FormatError::parse(
            path,
            1,
            "expected header frame_id,q1,...,qn",
        ));
    }
    for (i, name) in headers.iter().enumerate().skip(1) {
        if name != format!("q{i}") {
            return Err(FormatError::parse(
                path,
                1,
                format!("expected column q{i}, found {name}"),
            ));
        }
    }
    let dof = headers.len() - 1;
    let mut states = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let line = index as u64 + 2;
        let record = record.map_err(|e| FormatError::parse(path, line, e))?;
        if record.len() != dof + 1 {
            return Err(FormatError::parse(
                path,
                line,
                format!("expected {} fields, found {}", dof + 1, record.len()),
            ));
        }
        let frame_id = record.get(0).unwrap_or_default().to_string();
        if frame_id.is_empty() {
            return Err(FormatError::parse(path, line, "empty frame_id"));
        }
        let mut angles = Vec::with_capacity(dof);
        for i in 0..dof {
            let field = record.get(i + 1).unwrap_or_default();
            let value: f64 = field.parse().map_err(|_| {
                FormatError::parse(path, line, format!("invalid joint angle {field:?}"))
            })?;
            if !value.is_finite() {
                return Err(FormatError::parse(
                    path,
                    line,
                    format!("non-finite joint angle {field:?}"),
                ));
            }
            angles.push(value);
        }
        states.push(JointState::new(frame_id, angles));
    }
    Ok(states)
}

/// Writes a joint log CSV with header `frame_id,q1,...,qn`.
pub fn write_joint_log(path: &Path, states: &[JointState]) -> Result<(), FormatError> {
    let dof = states.first().map(|s| s.angles.len()).unwrap_or(0);
    let mut buffer = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut buffer);
        let mut header = vec!["frame_id".to_string()];
        header.extend((1..=dof).map(|i| format!("q{i}")));
        writer
            .write_record(&header)
            .map_err(|e| FormatError::invalid(path, e))?;
        for state in states {
            let mut record = vec![state.frame_id.clone()];
            record.extend(state.angles.iter().map(|a| format!("{a:?}")));
            writer
                .write_record(&record)
                .map_err(|e| FormatError::invalid(path, e))?;
        }
        writer.flush().map_err(|e| FormatError::io(path, e))?;
    }
    write_atomic(path, &buffer)
}

/// Writes per-frame pose errors as CSV with header
/// `frame_id,translation_error_mm,rotation_error_deg`.
pub fn write_pose_errors(path: &Path, errors: &[FrameError]) -> Result<(), FormatError> {
    let mut buffer = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut buffer);
        writer
            .write_record(["frame_id", "translation_error_mm", "rotation_error_deg"])
            .map_err(|e| FormatError::invalid(path, e))?;
        for error in errors {
            writer
                .write_record([
                    error.frame_id.clone(),
                    format!("{:?}", error.translation_error_mm),
                    format!("{:?}", error.rotation_error_deg),
                ])
                .map_err(|e| FormatError::invalid(path, e))?;
        }
        writer.flush().map_err(|e| FormatError::io(path, e))?;
    }
    write_atomic(path, &buffer)
}

/// Writes a trajectory as CSV with header `frame_id,x_m,y_m,z_m,qw,qx,qy,qz`.
/// Translation in meters, rotation as a unit quaternion.
pub fn write_trajectory_csv(path: &Path, trajectory: &Trajectory) -> Result<(), FormatError> {
    let mut buffer = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut buffer);
        writer
            .write_record(["frame_id", "x_m", "y_m", "z_m", "qw", "qx", "qy", "qz"])
            .map_err(|e| FormatError::invalid(path, e))?;
        for (frame_id, pose) in trajectory.iter() {
            let t = pose.translation();
            let q = pose.rotation().quaternion().clone();
            writer
                .write_record([
                    frame_id.clone(),
                    format!("{:?}", t.x),
                    format!("{:?}", t.y),
                    format!("{:?}", t.z),
                    format!("{:?}", q.w),
                    format!("{:?}", q.i),
                    format!("{:?}", q.j),
                    format!("{:?}", q.k),
                ])
                .map_err(|e| FormatError::invalid(path, e))?;
        }
        writer.flush().map_err(|e| FormatError::io(path, e))?;
    }
    write_atomic(path, &buffer)
}

/// One pixel observation of a target point in a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    /// Frame the observation belongs to.
    pub frame_id: String,
    /// Target point observed.
    pub point_id: u32,
    /// Pixel location.
    pub pixel: PixelPoint,
}

/// Reads an observation CSV with header `frame_id,point_id,u,v`.
pub fn read_observations(path: &Path) -> Result<Vec<ObservationRecord>, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| FormatError::invalid(path, e))?;
    let headers = reader
        .headers()
        .map_err(|e| FormatError::invalid(path, e))?
        .clone();
    let expected = ["frame_id", "point_id", "u", "v"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(FormatError::parse(
            path,
            1,
            "expected header frame_id,point_id,u,v",
        ));
    }
    let mut records = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let line = index as u64 + 2;
        let record = record.map_err(|e| FormatError::parse(path, line, e))?;
        if record.len() != 4 {
            return Err(FormatError::parse(
                path,
                line,
                format!("expected 4 fields, found {}", record.len()),
            ));
        }
        let frame_id = record.get(0).unwrap_or_default().to_string();
        if frame_id.is_empty() {
            return Err(FormatError::parse(path, line, "empty frame_id"));
        }
        let point_id: u32 = record.get(1).unwrap_or_default().parse().map_err(|_| {
            FormatError::parse(
                path,
                line,
                format!("invalid point_id {:?}", record.get(1).unwrap_or_default()),
            )
        })?;
        let mut pixel = [0.0f64; 2];
        for (slot, value) in pixel.iter_mut().zip(2..4) {
            let field = record.get(value).unwrap_or_default();
            *slot = field.parse().map_err(|_| {
                FormatError::parse(path, line, format!("invalid pixel coordinate {field:?}"))
            })?;
            if !slot.is_finite() {
                return Err(FormatError::parse(
                    path,
                    line,
                    format!("non-finite pixel coordinate {field:?}"),
                ));
            }
        }
        records.push(ObservationRecord {
            frame_id,
            point_id,
            pixel: PixelPoint::new(pixel[0], pixel[1]),
        });
    }
    Ok(records)
}

/// Writes an observation CSV with header `frame_id,point_id,u,v`.
pub fn write_observations(
    path: &Path,
    records: &[ObservationRecord],
) -> Result<(), FormatError> {
    let mut buffer = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut buffer);
        writer
            .write_record(["frame_id", "point_id", "u", "v"])
            .map_err(|e| FormatError::invalid(path, e))?;
        for r in records {
            writer
                .write_record([
                    r.frame_id.clone(),
                    r.point_id.to_string(),
                    format!("{:?}", r.pixel.u),
                    format!("{:?}", r.pixel.v),
                ])
                .map_err(|e| FormatError::invalid(path, e))?;
        }
        writer.flush().map_err(|e| FormatError::io(path, e))?;
    }
    write_atomic(path, &buffer)
}

/// Groups observation records into calibration shots, pairing each frame
/// with its robot pose. Frames appear in first-observation order.
pub fn group_into_shots(
    records: &[ObservationRecord],
    robot_poses: &Trajectory,
    target: &CalibrationTarget,
) -> Result<Vec<CalibrationShot>, CalibError> {
    let mut order = Vec::new();
    let mut grouped: BTreeMap<&str, Vec<(u32, PixelPoint)>> = BTreeMap::new();
    for record in records {
        let entry = grouped.entry(record.frame_id.as_str()).or_default();
        if entry.is_empty() {
            order.push(record.frame_id.as_str());
        }
        entry.push((record.point_id, record.pixel));
    }
    let mut shots = Vec::with_capacity(order.len());
    for frame_id in order {
        let robot_pose = robot_poses
            .get(frame_id)
            .ok_or_else(|| CalibError::MissingPose(frame_id.to_string()))?;
        let observations = grouped.remove(frame_id).unwrap_or_default();
        shots.push(CalibrationShot::new(
            frame_id,
            *robot_pose,
            observations,
            target,
        )?);
    }
    Ok(shots)
}
