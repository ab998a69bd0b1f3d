//! Dataset manifest (transforms.json) shared with NeRF tooling. Internal
//! math carries world-to-camera poses with OpenCV camera axes (x right,
//! y down, z forward); the manifest stores camera-to-world with y up and
//! z backward, so export flips the camera y/z axes and import flips back.

use anyhow::{bail, Context, Result};
use nalgebra::Matrix4;
use posechain_core::camera::CameraIntrinsics;
use posechain_core::metrics::Trajectory;
use posechain_core::se3::RigidTransform;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

/// One posed image in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    /// Image path relative to the dataset root.
    pub file_path: String,
    /// Camera-to-world transform, row-major.
    pub transform_matrix: [[f64; 4]; 4],
}

/// transforms.json contents: one shared camera plus posed frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Focal length x in pixels.
    pub fl_x: f64,
    /// Focal length y in pixels.
    pub fl_y: f64,
    /// Principal point x in pixels.
    pub cx: f64,
    /// Principal point y in pixels.
    pub cy: f64,
    /// Image width in pixels.
    pub w: u32,
    /// Image height in pixels.
    pub h: u32,
    /// Radial distortion terms.
    pub k1: f64,
    /// Second radial term.
    pub k2: f64,
    /// Third radial term.
    pub k3: f64,
    /// First tangential term.
    pub p1: f64,
    /// Second tangential term.
    pub p2: f64,
    /// Distortion convention tag.
    pub camera_model: String,
    /// Posed frames.
    pub frames: Vec<ManifestFrame>,
}

fn flip_yz_columns(m: &mut Matrix4<f64>) {
    for r in 0..4 {
        m[(r, 1)] = -m[(r, 1)];
        m[(r, 2)] = -m[(r, 2)];
    }
}

fn rows_from(m: &Matrix4<f64>) -> [[f64; 4]; 4] {
    let mut rows = [[0.0; 4]; 4];
    for (r, row) in rows.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = m[(r, c)];
        }
    }
    rows
}

fn matrix_from(rows: &[[f64; 4]; 4]) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    for (r, row) in rows.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            m[(r, c)] = *v;
        }
    }
    m
}

impl DatasetManifest {
    /// Builds a manifest from world-to-camera poses, shared intrinsics and
    /// a frame-id-to-path naming rule.
    pub fn from_calibration(
        camera_poses: &Trajectory,
        intrinsics: &CameraIntrinsics,
        path_for: impl Fn(&str) -> String,
    ) -> Result<Self> {
        let mut frames = Vec::with_capacity(camera_poses.len());
        let mut seen = BTreeSet::new();
        for (frame_id, pose) in camera_poses.iter() {
            let file_path = path_for(frame_id);
            if !seen.insert(file_path.clone()) {
                bail!("duplicate image path {file_path}");
            }
            let mut c2w = pose.invert().to_matrix();
            flip_yz_columns(&mut c2w);
            frames.push(ManifestFrame {
                file_path,
                transform_matrix: rows_from(&c2w),
            });
        }
        Ok(Self {
            fl_x: intrinsics.fx,
            fl_y: intrinsics.fy,
            cx: intrinsics.cx,
            cy: intrinsics.cy,
            w: intrinsics.width,
            h: intrinsics.height,
            k1: intrinsics.k1,
            k2: intrinsics.k2,
            k3: intrinsics.k3,
            p1: intrinsics.p1,
            p2: intrinsics.p2,
            camera_model: "OPENCV".to_string(),
            frames,
        })
    }

    /// Recovers world-to-camera poses, labeling each frame by the file
    /// stem of its image path.
    pub fn camera_trajectory(&self) -> Result<Trajectory> {
        let mut entries = Vec::with_capacity(self.frames.len());
        for frame in &self.frames {
            let stem = Path::new(&frame.file_path)
                .file_stem()
                .and_then(|s| s.to_str())
                .with_context(|| format!("frame path {} has no file stem", frame.file_path))?;
            let mut c2w = matrix_from(&frame.transform_matrix);
            flip_yz_columns(&mut c2w);
            let pose = RigidTransform::from_matrix(&c2w)
                .with_context(|| format!("frame {} has a non-rigid transform", frame.file_path))?;
            entries.push((stem.to_string(), pose.invert()));
        }
        Trajectory::new(entries).context("manifest frames map to duplicate ids")
    }

    /// Shared intrinsics block.
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        let intrinsics = CameraIntrinsics {
            fx: self.fl_x,
            fy: self.fl_y,
            cx: self.cx,
            cy: self.cy,
            k1: self.k1,
            k2: self.k2,
            k3: self.k3,
            p1: self.p1,
            p2: self.p2,
            width: self.w,
            height: self.h,
        };
        intrinsics.validate().context("manifest intrinsics")?;
        Ok(intrinsics)
    }
}

/// Whether a JSON file looks like a dataset manifest rather than a plain
/// trajectory (detected by its "frames" key).
pub fn is_manifest(value: &serde_json::Value) -> bool {
    value.get("frames").is_some()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};

    fn sample_trajectory() -> Trajectory {
        let entries = (0..4)
            .map(|i| {
                let angle = 0.3 * i as f64 + 0.1;
                let pose = RigidTransform::new(
                    UnitQuaternion::from_euler_angles(angle, -0.2 * angle, 0.5),
                    Vector3::new(0.1 * i as f64, -0.05, 0.4 + 0.02 * i as f64),
                );
                (format!("f{i}"), pose)
            })
            .collect();
        Trajectory::new(entries).unwrap()
    }

    fn sample_intrinsics() -> CameraIntrinsics {
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

    #[test]
    fn world_to_camera_poses_round_trip_through_the_manifest() {
        let trajectory = sample_trajectory();
        let manifest = DatasetManifest::from_calibration(&trajectory, &sample_intrinsics(), |id| {
            format!("images/{id}.png")
        })
        .unwrap();
        assert_eq!(manifest.camera_model, "OPENCV");
        assert_eq!(manifest.frames[0].file_path, "images/f0.png");
        let back = manifest.camera_trajectory().unwrap();
        for ((id_a, pose_a), (id_b, pose_b)) in trajectory.iter().zip(back.iter()) {
            assert_eq!(id_a, id_b);
            let delta = pose_a.invert().compose(pose_b);
            assert!(delta.translation().norm() < 1e-12);
            assert!(delta.rotation_angle() < 1e-12);
        }
        let intr = manifest.intrinsics().unwrap();
        assert_eq!(intr.fx, 1400.0);
        assert_eq!(intr.width, 2855);
    }

    #[test]
    fn identity_pose_exports_the_axis_flip_only() {
        let trajectory = Trajectory::new(vec![("f0".into(), RigidTransform::identity())]).unwrap();
        let manifest =
            DatasetManifest::from_calibration(&trajectory, &sample_intrinsics(), |id| {
                format!("{id}.png")
            })
            .unwrap();
        let rows = manifest.frames[0].transform_matrix;
        let expected = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, -1.0, 0.0, 0.0],
            [0.0, 0.0, -1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        assert_eq!(rows, expected);
    }

    #[test]
    fn manifest_backward_axis_opposes_the_view_direction() {
        // A camera 0.5 m above the world origin looking straight down has
        // world-to-camera rotation Rx(pi). In the manifest its z column is
        // the backward axis, which must point up (+z world), while the up
        // axis (y column) stays horizontal for a straight-down view.
        let pose = RigidTransform::new(
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI),
            Vector3::new(0.0, 0.0, 0.5),
        );
        let trajectory = Trajectory::new(vec![("top".into(), pose)]).unwrap();
        let manifest =
            DatasetManifest::from_calibration(&trajectory, &sample_intrinsics(), |id| {
                format!("{id}.png")
            })
            .unwrap();
        let rows = manifest.frames[0].transform_matrix;
        // Camera center sits at +0.5 z.
        assert!((rows[2][3] - 0.5).abs() < 1e-12);
        // Backward axis: world z component positive.
        assert!(rows[2][2] > 0.99);
        // Up axis lies in the horizontal plane.
        assert!(rows[2][1].abs() < 1e-12);
    }

    #[test]
    fn serialization_round_trip_is_byte_identical() {
        let manifest = DatasetManifest::from_calibration(
            &sample_trajectory(),
            &sample_intrinsics(),
            |id| format!("images/{id}.png"),
        )
        .unwrap();
        let first = serde_json::to_string_pretty(&manifest).unwrap();
        let back: DatasetManifest = serde_json::from_str(&first).unwrap();
        let second = serde_json::to_string_pretty(&back).unwrap();
        assert_eq!(first, second);
        assert_eq!(back, manifest);
    }

    #[test]
    fn duplicate_paths_are_rejected() {
        let trajectory = sample_trajectory();
        let result =
            DatasetManifest::from_calibration(&trajectory, &sample_intrinsics(), |_| {
                "same.png".to_string()
            });
        assert!(result.is_err());
    }
}
