//! Rotation, pose, and trajectory-alignment math shared by every module.
//!
//! Conventions: Hamilton quaternions, passive rotations, right-handed frames,
//! world z-up. A quaternion and its negation represent the same rotation;
//! [`canonicalize`] picks the representative with `w >= 0` so serialized
//! output is deterministic.

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

/// Coordinate frame a quantity is expressed in.
///
/// Operations that mix frames document the transform applied; the tag itself
/// carries no data and exists for API clarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameTag {
    World,
    Body,
    Radar,
}

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("point sets are degenerate (coincident or collinear), alignment is not unique")]
    DegenerateGeometry,
    #[error("alignment needs at least 3 point pairs of equal length, got {est} vs {reference}")]
    BadPointCount { est: usize, reference: usize },
}

/// Returns the representative of {q, -q} with non-negative scalar part.
pub fn canonicalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-*q.quaternion())
    } else {
        q
    }
}

/// Hamilton product of two unit quaternions, renormalized.
///
/// Inputs that drifted from unit norm by more than 1e-6 are renormalized
/// before multiplying; the result is always unit within 1e-9.
pub fn quat_multiply(a: UnitQuaternion<f64>, b: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let a = renormalize(a);
    let b = renormalize(b);
    UnitQuaternion::new_normalize(a.quaternion() * b.quaternion())
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if (q.quaternion().norm() - 1.0).abs() > 1e-6 {
        UnitQuaternion::new_normalize(*q.quaternion())
    } else {
        q
    }
}

/// Applies the rotation `q` to a vector. Preserves the vector norm.
pub fn rotate_vector(q: &UnitQuaternion<f64>, v: &Vector3<f64>) -> Vector3<f64> {
    q.transform_vector(v)
}

/// Vector (imaginary) part `[x, y, z]` of the canonicalized quaternion.
///
/// Canonicalizing first makes the result independent of which of {q, -q}
/// the caller holds.
pub fn vec_part(q: UnitQuaternion<f64>) -> Vector3<f64> {
    let q = canonicalize(q);
    Vector3::new(q.i, q.j, q.k)
}

/// Left-multiplication matrix L(q) with L(q)·p = q ⊗ p on [w, x, y, z] vectors.
pub fn quat_left_matrix(q: &UnitQuaternion<f64>) -> Matrix4<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix4::new(
        w, -x, -y, -z, //
        x, w, -z, y, //
        y, z, w, -x, //
        z, -y, x, w,
    )
}

/// Right-multiplication matrix R(q) with R(q)·p = p ⊗ q on [w, x, y, z] vectors.
pub fn quat_right_matrix(q: &UnitQuaternion<f64>) -> Matrix4<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix4::new(
        w, -x, -y, -z, //
        x, w, z, -y, //
        y, -z, w, x, //
        z, y, -x, w,
    )
}

/// Skew-symmetric cross-product matrix: skew(a)·b = a × b.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rigid transform: rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: quat_multiply(self.rotation, other.rotation),
            translation: self.rotation.transform_vector(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv_rot = self.rotation.inverse();
        Pose {
            rotation: inv_rot,
            translation: -(inv_rot.transform_vector(&self.translation)),
        }
    }

    /// Maps a point from the source frame of this pose into its target frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transform_vector(p) + self.translation
    }
}

/// Rigid alignment (rotation + translation, no scale) of `est` onto `reference`,
/// minimizing the sum of squared point distances.
///
/// Returns the pose `T` with `T(est[i]) ≈ reference[i]`.
pub fn umeyama_align(est: &[Vector3<f64>], reference: &[Vector3<f64>]) -> Result<Pose, GeomError> {
    if est.len() != reference.len() || est.len() < 3 {
        return Err(GeomError::BadPointCount {
            est: est.len(),
            reference: reference.len(),
        });
    }
    let n = est.len() as f64;
    let centroid_est: Vector3<f64> = est.iter().sum::<Vector3<f64>>() / n;
    let centroid_ref: Vector3<f64> = reference.iter().sum::<Vector3<f64>>() / n;

    let mut cross = Matrix3::zeros();
    for (a, b) in est.iter().zip(reference.iter()) {
        cross += (a - centroid_est) * (b - centroid_ref).transpose();
    }

    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    // Rotation about the common line (or any axis, for coincident sets) is
    // unobservable when the second singular value vanishes.
    let s = svd.singular_values;
    if s[0] <= f64::EPSILON || s[1] <= 1e-9 * s[0] {
        return Err(GeomError::DegenerateGeometry);
    }

    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    let rot_mat = v * correction * u.transpose();

    let rotation = canonicalize(UnitQuaternion::from_rotation_matrix(
        &Rotation3::from_matrix_unchecked(rot_mat),
    ));
    let translation = centroid_ref - rot_mat * centroid_est;
    Ok(Pose::new(rotation, translation))
}

/// Quaternion exponential of a rotation-vector increment, used as the
/// retraction in error-state updates: q ← q ⊗ exp_quat(δθ).
pub fn exp_quat(delta_theta: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*delta_theta)
}

/// First-order quaternion increment [1, δ/2], normalized.
///
/// Matches `exp_quat` to first order and is cheaper inside bias-correction
/// chains whose Jacobians are derived against this exact form.
pub fn small_quat(delta_theta: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(Quaternion::new(
        1.0,
        0.5 * delta_theta.x,
        0.5 * delta_theta.y,
        0.5 * delta_theta.z,
    ))
}
