use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Orthonormality / determinant tolerance required of every transform
/// produced by this crate.
pub const SO3_TOL: f64 = 1e-9;

/// Looser tolerance applied to transforms supplied from the outside
/// (e.g. JSON files), which may have gone through float32 round-trips.
pub const SO3_INPUT_TOL: f64 = 1e-6;

/// Rigid motion `x ↦ R·x + t` with `R ∈ SO(3)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_points(&self, points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        points.iter().map(|p| self.apply(p)).collect()
    }

    /// Rotates a direction (no translation).
    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `compose(a, b)` applies `b` first, then `a`.
    pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: a.rotation * b.rotation,
            translation: a.rotation * b.translation + a.translation,
        }
    }

    pub fn invert(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Geodesic distance on SO(3) to another rotation, in radians.
    ///
    /// Computed as `atan2(‖axial(R)‖, (tr(R) − 1)/2)`: the sine comes from the
    /// antisymmetric part and the cosine from the trace, which stays
    /// well-conditioned at both ends of [0, π] (plain `acos` of the trace
    /// loses half the significant digits near 0).
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let sin = Vector3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        )
        .norm()
            / 2.0;
        let cos = (rel.trace() - 1.0) / 2.0;
        sin.atan2(cos)
    }

    /// Rotation angle away from the identity, in radians.
    pub fn rotation_angle(&self) -> f64 {
        self.rotation_angle_to(&RigidTransform::identity())
    }

    pub fn translation_distance_to(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Largest deviation from `RᵀR = I` plus the determinant error.
    pub fn rigidity_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation;
        let ortho = (gram - Matrix3::identity()).abs().max();
        let det = (self.rotation.determinant() - 1.0).abs();
        ortho.max(det)
    }

    pub fn is_rigid(&self, tol: f64) -> bool {
        self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
            && self.rigidity_error() <= tol
    }

    /// Projects the rotation block back onto SO(3) via SVD (nearest rotation
    /// in the Frobenius sense). Call after accumulating many small updates.
    pub fn orthonormalized(&self) -> RigidTransform {
        RigidTransform {
            rotation: nearest_rotation(&self.rotation),
            translation: self.translation,
        }
    }

    /// Row-major 4×4 homogeneous matrix, translation in the last column.
    pub fn to_mat4_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
            0.0,
            0.0,
            0.0,
            1.0,
        ]
    }

    /// Parses a row-major 4×4 homogeneous matrix, validating the rigid
    /// structure (`tol` bounds both orthonormality and the bottom row).
    pub fn from_mat4_row_major(m: &[f64; 16], tol: f64) -> Result<RigidTransform> {
        let bottom_ok = m[12].abs() <= tol
            && m[13].abs() <= tol
            && m[14].abs() <= tol
            && (m[15] - 1.0).abs() <= tol;
        if !bottom_ok {
            return Err(Error::InvalidTransform(
                "bottom row must be [0, 0, 0, 1]".into(),
            ));
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        let t = RigidTransform {
            rotation,
            translation,
        };
        if !t.is_rigid(tol) {
            return Err(Error::InvalidTransform(format!(
                "rotation block is not special orthogonal (error {:.3e}, tolerance {:.1e})",
                t.rigidity_error(),
                tol
            )));
        }
        Ok(t)
    }
}

/// Nearest rotation matrix to `m`: `R = U·diag(1, 1, det(U·Vᵀ))·Vᵀ`.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd with u requested");
    let v_t = svd.v_t.expect("svd with v_t requested");
    let d = (u * v_t).determinant();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    u * fix * v_t
}

/// Rotation matrix for a right-handed rotation of `angle` radians about `axis`.
pub fn rotation_about_axis(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let axis = nalgebra::Unit::new_normalize(*axis);
    nalgebra::Rotation3::from_axis_angle(&axis, angle).into_inner()
}

/// Uniformly distributed rotation (Haar measure on SO(3)) drawn by
/// normalizing a 4-vector of standard Gaussians into a quaternion.
pub fn random_rotation<R: rand::Rng>(rng: &mut R) -> Matrix3<f64> {
    let n = rand_distr::StandardNormal;
    let q = Quaternion::new(
        rng.sample::<f64, _>(n),
        rng.sample::<f64, _>(n),
        rng.sample::<f64, _>(n),
        rng.sample::<f64, _>(n),
    );
    UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .into_inner()
}

/// Uniform direction on the unit sphere.
pub fn random_unit_vector<R: rand::Rng>(rng: &mut R) -> Vector3<f64> {
    let n = rand_distr::StandardNormal;
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(n),
            rng.sample::<f64, _>(n),
            rng.sample::<f64, _>(n),
        );
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_mat4_row_major().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw: Vec<f64> = Vec::deserialize(deserializer)?;
        let arr: [f64; 16] = raw
            .try_into()
            .map_err(|v: Vec<f64>| D::Error::custom(format!("expected 16 numbers, got {}", v.len())))?;
        RigidTransform::from_mat4_row_major(&arr, SO3_INPUT_TOL).map_err(D::Error::custom)
    }
}
