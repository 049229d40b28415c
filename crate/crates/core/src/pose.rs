//! Rigid transforms in SE(3) stored as a unit quaternion plus translation.

use nalgebra::{Matrix4, Quaternion, UnitQuaternion, Vector3, Vector6};

/// Body-frame twist `[v; ω]`: linear part in meters, angular part in radians.
pub type Twist = Vector6<f64>;

/// Largest tolerated deviation of a quaternion norm from one.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// A rigid transform. The rotation is kept with a non-negative scalar part so
/// that each rotation has exactly one stored representation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoseError {
    #[error("quaternion norm {norm} is not within {UNIT_NORM_TOL:e} of 1")]
    NonUnitQuaternion { norm: f64 },
    #[error("pose component is not finite")]
    NonFinite,
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: canonical(rotation),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Builds a pose from raw `(w, x, y, z)` quaternion components without
    /// renormalizing them; the norm must already be within [`UNIT_NORM_TOL`].
    pub fn from_wxyz(translation: Vector3<f64>, wxyz: [f64; 4]) -> Result<Self, PoseError> {
        if translation.iter().chain(wxyz.iter()).any(|v| !v.is_finite()) {
            return Err(PoseError::NonFinite);
        }
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(PoseError::NonUnitQuaternion { norm });
        }
        Ok(Self::new(UnitQuaternion::new_unchecked(q), translation))
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Quaternion components in `(w, x, y, z)` order.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self * other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(inv, -(inv * self.translation))
    }

    /// Applies a body-frame twist: `R ← R·exp(ω)`, `p ← p + R·v`.
    pub fn retract(&self, twist: &Twist) -> Pose {
        let v = Vector3::new(twist[0], twist[1], twist[2]);
        let w = Vector3::new(twist[3], twist[4], twist[5]);
        Pose::new(
            self.rotation * UnitQuaternion::from_scaled_axis(w),
            self.translation + self.rotation * v,
        )
    }

    /// Inverse of [`Pose::retract`]: the twist taking `self` to `other`, with
    /// the angular part given by the principal rotation logarithm.
    pub fn local_coordinates(&self, other: &Pose) -> Twist {
        let inv = self.rotation.inverse();
        let v = inv * (other.translation - self.translation);
        let w = (inv * other.rotation).scaled_axis();
        Twist::new(v.x, v.y, v.z, w.x, w.y, w.z)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = self.rotation.to_homogeneous();
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
    }
}
