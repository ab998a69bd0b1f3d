//! Pinhole camera with radial and tangential lens distortion.
//!
//! Projection maps a camera-frame point to normalized coordinates, applies
//! the distortion polynomial (three radial terms `k1, k2, k3` plus two
//! tangential terms `p1, p2`) and then the affine focal/principal-point map.
//! The analytic Jacobian covers both the camera-frame point and the nine
//! intrinsic parameters so calibration can refine any subset of them.

use nalgebra::{SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Depths at or below this bound reject projection.
pub const MIN_DEPTH: f64 = 1e-12;

/// Iteration cap for the fixed-point undistortion.
const UNDISTORT_MAX_ITERATIONS: usize = 50;

/// Pixel-space convergence threshold for undistortion.
const UNDISTORT_TOL_PX: f64 = 1e-10;

/// Jacobian of the projection: 2 rows (u, v), 12 columns in the order
/// `[x_c, y_c, z_c, fx, fy, cx, cy, k1, k2, k3, p1, p2]`.
pub type ProjectionJacobian = SMatrix<f64, 2, 12>;

/// Errors raised by camera operations.
#[derive(Debug, Error)]
pub enum CameraError {
    /// The point sits on or behind the optical center plane.
    #[error("point depth {0} is not positive")]
    NonPositiveDepth(f64),
    /// Fixed-point undistortion failed to converge within the iteration cap.
    #[error("undistortion did not converge within {UNDISTORT_MAX_ITERATIONS} iterations")]
    NoConvergence,
    /// Parameters fail the basic validity checks.
    #[error("invalid intrinsics: {0}")]
    InvalidParameters(String),
}

/// A pixel location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    /// Horizontal coordinate in pixels.
    pub u: f64,
    /// Vertical coordinate in pixels.
    pub v: f64,
}

impl PixelPoint {
    /// Builds a pixel point.
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Euclidean distance to another pixel.
    pub fn distance(&self, other: &PixelPoint) -> f64 {
        ((self.u - other.u).powi(2) + (self.v - other.v).powi(2)).sqrt()
    }
}

/// Pinhole intrinsics with distortion. The JSON field names match the
/// dataset-manifest schema (`fl_x`, `fl_y`, `w`, `h`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Focal length along x in pixels.
    #[serde(rename = "fl_x")]
    pub fx: f64,
    /// Focal length along y in pixels.
    #[serde(rename = "fl_y")]
    pub fy: f64,
    /// Principal point x in pixels.
    pub cx: f64,
    /// Principal point y in pixels.
    pub cy: f64,
    /// Second-order radial distortion coefficient.
    pub k1: f64,
    /// Fourth-order radial distortion coefficient.
    pub k2: f64,
    /// Sixth-order radial distortion coefficient.
    pub k3: f64,
    /// First tangential distortion coefficient.
    pub p1: f64,
    /// Second tangential distortion coefficient.
    pub p2: f64,
    /// Image width in pixels.
    #[serde(rename = "w")]
    pub width: u32,
    /// Image height in pixels.
    #[serde(rename = "h")]
    pub height: u32,
}

impl CameraIntrinsics {
    /// Builds intrinsics without distortion.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
            p1: 0.0,
            p2: 0.0,
            width,
            height,
        }
    }

    /// Checks focal lengths, image size and finiteness of all parameters.
    pub fn validate(&self) -> Result<(), CameraError> {
        let values = [
            self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.k3, self.p1, self.p2,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CameraError::InvalidParameters("non-finite parameter".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(CameraError::InvalidParameters(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::InvalidParameters("image size must be non-zero".into()));
        }
        Ok(())
    }

    /// Applies the distortion polynomial to normalized coordinates.
    pub fn distort_normalized(&self, x: f64, y: f64) -> (f64, f64) {
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        let xd = x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
        (xd, yd)
    }

    /// Projects a camera-frame point to pixel coordinates.
    pub fn project(&self, point: &Vector3<f64>) -> Result<PixelPoint, CameraError> {
        if point.z <= MIN_DEPTH {
            return Err(CameraError::NonPositiveDepth(point.z));
        }
        let x = point.x / point.z;
        let y = point.y / point.z;
        let (xd, yd) = self.distort_normalized(x, y);
        Ok(PixelPoint::new(self.fx * xd + self.cx, self.fy * yd + self.cy))
    }

    /// Projects a point and returns the analytic Jacobian with respect to
    /// the camera-frame point and the nine intrinsics. Column order:
    /// `[x_c, y_c, z_c, fx, fy, cx, cy, k1, k2, k3, p1, p2]`.
    pub fn project_with_jacobian(
        &self,
        point: &Vector3<f64>,
    ) -> Result<(PixelPoint, ProjectionJacobian), CameraError> {
        if point.z <= MIN_DEPTH {
            return Err(CameraError::NonPositiveDepth(point.z));
        }
        let z_inv = 1.0 / point.z;
        let x = point.x * z_inv;
        let y = point.y * z_inv;
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        // d(radial)/d(r2)
        let radial_d = self.k1 + r2 * (2.0 * self.k2 + 3.0 * self.k3 * r2);
        let xd = x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
        let pixel = PixelPoint::new(self.fx * xd + self.cx, self.fy * yd + self.cy);

        // Distorted normalized coordinates w.r.t. undistorted ones.
        let dxd_dx = radial + 2.0 * x * x * radial_d + 2.0 * self.p1 * y + 6.0 * self.p2 * x;
        let dxd_dy = 2.0 * x * y * radial_d + 2.0 * self.p1 * x + 2.0 * self.p2 * y;
        let dyd_dx = dxd_dy;
        let dyd_dy = radial + 2.0 * y * y * radial_d + 6.0 * self.p1 * y + 2.0 * self.p2 * x;

        // Normalized coordinates w.r.t. the camera-frame point.
        // dx/d(point) = [1/z, 0, -x/z]; dy/d(point) = [0, 1/z, -y/z].
        let mut j = ProjectionJacobian::zeros();
        let du_dx = self.fx * dxd_dx;
        let du_dy = self.fx * dxd_dy;
        let dv_dx = self.fy * dyd_dx;
        let dv_dy = self.fy * dyd_dy;
        j[(0, 0)] = du_dx * z_inv;
        j[(0, 1)] = du_dy * z_inv;
        j[(0, 2)] = -(du_dx * x + du_dy * y) * z_inv;
        j[(1, 0)] = dv_dx * z_inv;
        j[(1, 1)] = dv_dy * z_inv;
        j[(1, 2)] = -(dv_dx * x + dv_dy * y) * z_inv;

        // Intrinsics columns.
        let r4 = r2 * r2;
        let r6 = r4 * r2;
        j[(0, 3)] = xd; // fx
        j[(0, 5)] = 1.0; // cx
        j[(0, 7)] = self.fx * x * r2; // k1
        j[(0, 8)] = self.fx * x * r4; // k2
        j[(0, 9)] = self.fx * x * r6; // k3
        j[(0, 10)] = self.fx * 2.0 * x * y; // p1
        j[(0, 11)] = self.fx * (r2 + 2.0 * x * x); // p2
        j[(1, 4)] = yd; // fy
        j[(1, 6)] = 1.0; // cy
        j[(1, 7)] = self.fy * y * r2;
        j[(1, 8)] = self.fy * y * r4;
        j[(1, 9)] = self.fy * y * r6;
        j[(1, 10)] = self.fy * (r2 + 2.0 * y * y);
        j[(1, 11)] = self.fy * 2.0 * x * y;

        Ok((pixel, j))
    }

    /// Inverts the distortion for a pixel, returning undistorted normalized
    /// coordinates. Fixed-point iteration seeded with the distorted
    /// normalized point; fails with [`CameraError::NoConvergence`] if the
    /// re-projected pixel does not settle within the iteration cap.
    pub fn undistort(&self, pixel: &PixelPoint) -> Result<Vector2<f64>, CameraError> {
        let xd = (pixel.u - self.cx) / self.fx;
        let yd = (pixel.v - self.cy) / self.fy;
        let mut x = xd;
        let mut y = yd;
        for _ in 0..UNDISTORT_MAX_ITERATIONS {
            let r2 = x * x + y * y;
            let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
            let tang_x = 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
            let tang_y = self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
            x = (xd - tang_x) / radial;
            y = (yd - tang_y) / radial;
            let (rx, ry) = self.distort_normalized(x, y);
            let err_u = self.fx * (rx - xd);
            let err_v = self.fy * (ry - yd);
            if err_u.hypot(err_v) < UNDISTORT_TOL_PX {
                return Ok(Vector2::new(x, y));
            }
        }
        Err(CameraError::NoConvergence)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn test_camera() -> CameraIntrinsics {
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
    fn principal_ray_hits_principal_point() {
        let cam = test_camera();
        let px = cam.project(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(px.u, cam.cx, epsilon = 1e-12);
        assert_abs_diff_eq!(px.v, cam.cy, epsilon = 1e-12);
    }

    #[test]
    fn off_axis_point_matches_longhand_polynomial() {
        // Independent longhand evaluation of the distortion polynomial for
        // a point at normalized (0.2, -0.1) with k1 = -0.1 only.
        let mut cam = CameraIntrinsics::pinhole(1000.0, 1000.0, 640.0, 480.0, 1280, 960);
        cam.k1 = -0.1;
        let point = Vector3::new(0.2, -0.1, 1.0);
        let px = cam.project(&point).unwrap();

        let (x, y) = (0.2f64, -0.1f64);
        let r2 = x * x + y * y;
        let scale = 1.0 + (-0.1) * r2;
        let expected_u = 1000.0 * (x * scale) + 640.0;
        let expected_v = 1000.0 * (y * scale) + 480.0;
        assert_abs_diff_eq!(px.u, expected_u, epsilon = 1e-10);
        assert_abs_diff_eq!(px.v, expected_v, epsilon = 1e-10);
    }

    #[test]
    fn rejects_non_positive_depth() {
        let cam = test_camera();
        assert!(matches!(
            cam.project(&Vector3::new(0.1, 0.1, 0.0)),
            Err(CameraError::NonPositiveDepth(_))
        ));
        assert!(matches!(
            cam.project(&Vector3::new(0.1, 0.1, -0.5)),
            Err(CameraError::NonPositiveDepth(_))
        ));
        assert!(cam.project(&Vector3::new(0.1, 0.1, 1e-13)).is_err());
    }

    #[test]
    fn undistort_round_trip_across_field_of_view() {
        let cam = test_camera();
        let diag = ((cam.width as f64).powi(2) + (cam.height as f64).powi(2)).sqrt();
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..500 {
            // Sample pixels out to 1.5x the half-diagonal around the center.
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let radius = rng.random_range(0.0..0.75 * diag);
            let px = PixelPoint::new(
                cam.cx + radius * angle.cos(),
                cam.cy + radius * angle.sin(),
            );
            let normalized = match cam.undistort(&px) {
                Ok(n) => n,
                Err(CameraError::NoConvergence) => continue,
                Err(e) => panic!("unexpected error: {e}"),
            };
            let (xd, yd) = cam.distort_normalized(normalized.x, normalized.y);
            let back = PixelPoint::new(cam.fx * xd + cam.cx, cam.fy * yd + cam.cy);
            assert!(
                back.distance(&px) < 1e-8,
                "round trip error {} at {:?}",
                back.distance(&px),
                px
            );
        }
    }

    #[test]
    fn undistort_reports_divergence() {
        // Huge positive radial terms make the fixed point unstable far from
        // the center, which must surface as NoConvergence rather than junk.
        let mut cam = CameraIntrinsics::pinhole(100.0, 100.0, 320.0, 240.0, 640, 480);
        cam.k1 = 8.0;
        cam.k2 = 40.0;
        let result = cam.undistort(&PixelPoint::new(620.0, 470.0));
        assert!(matches!(result, Err(CameraError::NoConvergence)));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let cam = test_camera();
        let mut rng = StdRng::seed_from_u64(22);
        let step = 1e-6;
        for _ in 0..1000 {
            let point = Vector3::new(
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(0.5..2.0),
            );
            let (_, jac) = cam.project_with_jacobian(&point).unwrap();

            let mut fd = ProjectionJacobian::zeros();
            for col in 0..3 {
                let mut fwd = point;
                let mut bwd = point;
                fwd[col] += step;
                bwd[col] -= step;
                let pf = cam.project(&fwd).unwrap();
                let pb = cam.project(&bwd).unwrap();
                fd[(0, col)] = (pf.u - pb.u) / (2.0 * step);
                fd[(1, col)] = (pf.v - pb.v) / (2.0 * step);
            }
            let apply = |f: &dyn Fn(&mut CameraIntrinsics, f64)| {
                let mut cf = cam;
                f(&mut cf, step);
                let mut cb = cam;
                f(&mut cb, -step);
                let pf = cf.project(&point).unwrap();
                let pb = cb.project(&point).unwrap();
                [
                    (pf.u - pb.u) / (2.0 * step),
                    (pf.v - pb.v) / (2.0 * step),
                ]
            };
            let setters: [&dyn Fn(&mut CameraIntrinsics, f64); 9] = [
                &|c, d| c.fx += d,
                &|c, d| c.fy += d,
                &|c, d| c.cx += d,
                &|c, d| c.cy += d,
                &|c, d| c.k1 += d,
                &|c, d| c.k2 += d,
                &|c, d| c.k3 += d,
                &|c, d| c.p1 += d,
                &|c, d| c.p2 += d,
            ];
            for (i, setter) in setters.iter().enumerate() {
                let d = apply(setter);
                fd[(0, 3 + i)] = d[0];
                fd[(1, 3 + i)] = d[1];
            }

            let scale = jac.norm().max(1.0);
            assert!(
                (jac - fd).norm() / scale < 1e-5,
                "jacobian mismatch: rel err {}",
                (jac - fd).norm() / scale
            );
        }
    }

    #[test]
    fn intrinsics_json_uses_manifest_field_names() {
        let cam = test_camera();
        let value = serde_json::to_value(cam).unwrap();
        assert!(value.get("fl_x").is_some());
        assert!(value.get("fl_y").is_some());
        assert!(value.get("w").is_some());
        assert!(value.get("h").is_some());
        assert!(value.get("k1").is_some());
        let back: CameraIntrinsics = serde_json::from_value(value).unwrap();
        assert_eq!(back, cam);
    }

    #[test]
    fn validate_flags_bad_parameters() {
        let mut cam = test_camera();
        cam.fx = -1.0;
        assert!(cam.validate().is_err());
        let mut cam = test_camera();
        cam.k2 = f64::NAN;
        assert!(cam.validate().is_err());
        assert!(test_camera().validate().is_ok());
    }
}
