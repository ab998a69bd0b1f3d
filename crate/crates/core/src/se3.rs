//! Rigid and similarity transforms on SE(3).
//!
//! A [`RigidTransform`] stores a unit quaternion plus a translation vector and
//! is the pose representation shared by every other module. All angles are in
//! radians; conversion to degrees happens only at reporting boundaries.
//! Serialized form is a row-major 4x4 homogeneous matrix as nested JSON
//! arrays.

use nalgebra::{Matrix3, Matrix4, Quaternion, Unit, UnitQuaternion, Vector3};
use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Tolerance on the rotation block when accepting a 4x4 matrix as rigid.
const MATRIX_ORTHONORMALITY_TOL: f64 = 1e-6;

/// Errors raised by transform constructors and conversions.
#[derive(Debug, Error)]
pub enum Se3Error {
    /// The 4x4 matrix is not a homogeneous rigid transform.
    #[error("matrix is not a rigid transform: {0}")]
    InvalidMatrix(String),
    /// A similarity transform was given a non-positive scale.
    #[error("similarity scale must be positive and finite, got {0}")]
    NonPositiveScale(f64),
}

/// Proper rigid transform: rotation as a unit quaternion plus translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    /// Identity transform.
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform from a rotation and a translation. The quaternion
    /// is renormalized so the unit-norm invariant holds within 1e-12.
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::new_normalize(rotation.into_inner()),
            translation,
        }
    }

    /// Builds a transform from an axis-angle rotation vector and translation.
    /// A zero rotation vector yields the identity rotation.
    pub fn from_axis_angle(rotation_vector: Vector3<f64>, translation: Vector3<f64>) -> Self {
        let angle = rotation_vector.norm();
        let rotation = if angle < f64::EPSILON {
            UnitQuaternion::identity()
        } else {
            UnitQuaternion::from_axis_angle(&Unit::new_normalize(rotation_vector), angle)
        };
        Self::new(rotation, translation)
    }

    /// Rotation component.
    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.rotation
    }

    /// Translation component.
    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    /// Rotation as a 3x3 matrix.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Composition `self * other`: applies `other` first, then `self`.
    /// The resulting quaternion is renormalized.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let rotation = self.rotation * other.rotation;
        let translation = self.rotation * other.translation + self.translation;
        RigidTransform::new(rotation, translation)
    }

    /// Inverse transform.
    pub fn invert(&self) -> RigidTransform {
        let inv_rot = self.rotation.inverse();
        RigidTransform::new(inv_rot, -(inv_rot * self.translation))
    }

    /// Applies the transform to a point.
    pub fn transform_point(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// Rotation angle in radians, in [0, pi]. Computed through
    /// atan2(|imag|, |w|) which stays accurate for angles near pi.
    pub fn rotation_angle(&self) -> f64 {
        let q = self.rotation.quaternion();
        2.0 * q.imag().norm().atan2(q.scalar().abs())
    }

    /// Euclidean norm of the translation component.
    pub fn translation_norm(&self) -> f64 {
        self.translation.norm()
    }

    /// Homogeneous 4x4 matrix.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Builds a transform from a homogeneous 4x4 matrix. The rotation block
    /// must be orthonormal with determinant +1 and the bottom row must be
    /// (0, 0, 0, 1), each within 1e-6.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self, Se3Error> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Se3Error::InvalidMatrix("non-finite entries".into()));
        }
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        let bottom_err = (bottom[0].abs())
            .max(bottom[1].abs())
            .max(bottom[2].abs())
            .max((bottom[3] - 1.0).abs());
        if bottom_err > MATRIX_ORTHONORMALITY_TOL {
            return Err(Se3Error::InvalidMatrix(format!(
                "bottom row deviates from (0,0,0,1) by {bottom_err:.3e}"
            )));
        }
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let ortho_err = (r.transpose() * r - Matrix3::identity()).norm();
        if ortho_err > MATRIX_ORTHONORMALITY_TOL {
            return Err(Se3Error::InvalidMatrix(format!(
                "rotation block is not orthonormal (|R^T R - I| = {ortho_err:.3e})"
            )));
        }
        if r.determinant() < 0.0 {
            return Err(Se3Error::InvalidMatrix(
                "rotation block has negative determinant".into(),
            ));
        }
        let rotation =
            UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(r));
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        Ok(Self::new(rotation, translation))
    }

    /// Row-major nested-array form used by the JSON formats.
    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let m = self.to_matrix();
        let mut rows = [[0.0; 4]; 4];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[(i, j)];
            }
        }
        rows
    }

    /// Parses the row-major nested-array form.
    pub fn from_rows(rows: &[[f64; 4]; 4]) -> Result<Self, Se3Error> {
        let mut m = Matrix4::zeros();
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Self::from_matrix(&m)
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = <[[f64; 4]; 4]>::deserialize(deserializer)?;
        RigidTransform::from_rows(&rows).map_err(D::Error::custom)
    }
}

/// Similarity transform: `x -> scale * R * x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    scale: f64,
    transform: RigidTransform,
}

impl SimilarityTransform {
    /// Builds a similarity from a positive scale and a rigid part.
    pub fn new(scale: f64, transform: RigidTransform) -> Result<Self, Se3Error> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Se3Error::NonPositiveScale(scale));
        }
        Ok(Self { scale, transform })
    }

    /// Identity similarity (scale 1).
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            transform: RigidTransform::identity(),
        }
    }

    /// Scale factor.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Rigid part (rotation and translation).
    pub fn rigid(&self) -> RigidTransform {
        self.transform
    }

    /// Applies the similarity to a point.
    pub fn transform_point(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.transform.rotation() * point) + self.transform.translation()
    }

    /// Applies the similarity to a pose expressed in the common frame:
    /// the rotation composes on the left, the position maps like a point.
    pub fn transform_pose(&self, pose: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.transform.rotation() * pose.rotation(),
            self.transform_point(&pose.translation()),
        )
    }
}

/// Chordal mean of unit quaternions: sign-aligns all inputs against the
/// first, averages the coefficients and renormalizes. Inputs must be
/// non-empty; the caller guarantees this.
pub fn mean_rotation(rotations: &[UnitQuaternion<f64>]) -> UnitQuaternion<f64> {
    let first = rotations[0].quaternion().coords;
    let mut sum = nalgebra::Vector4::zeros();
    for q in rotations {
        let c = q.quaternion().coords;
        sum += if c.dot(&first) < 0.0 { -c } else { c };
    }
    UnitQuaternion::new_normalize(Quaternion::from_vector(sum))
}
