//! Rigid-body pose algebra.
//!
//! A [`Pose`] maps coordinates expressed in a child frame into its parent
//! frame: `x_parent = R * x_child + t`. Rotations are stored as unit
//! quaternions and re-normalized after every composition so that long
//! high-rate pose streams do not accumulate drift.

use nalgebra::{Matrix4, Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// 3-vector in meters.
pub type Vec3 = Vector3<f64>;

/// Tolerance for single group operations.
pub const ATOMIC_TOL: f64 = 1e-9;
/// Tolerance for chains of compositions.
pub const COMPOSED_TOL: f64 = 1e-8;

/// Serializes as the 7-number row `(tx ty tz qw qx qy qz)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 7]", from = "[f64; 7]")]
pub struct Pose {
    pub translation: Vec3,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            translation: Vec3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn new(translation: Vec3, rotation: UnitQuaternion<f64>) -> Self {
        let mut rotation = rotation;
        rotation.renormalize();
        Self {
            translation,
            rotation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vec3::new(x, y, z), UnitQuaternion::identity())
    }

    /// Rotation of `angle` radians about `axis`, with translation `t`.
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let rotation = match Unit::try_new(axis, 1e-12) {
            Some(axis) => UnitQuaternion::from_axis_angle(&axis, angle),
            None => UnitQuaternion::identity(),
        };
        Self::new(translation, rotation)
    }

    /// Builds a pose from (w, x, y, z) quaternion components, normalizing them.
    pub fn from_wxyz(translation: Vec3, w: f64, x: f64, y: f64, z: f64) -> Self {
        Self::new(
            translation,
            UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
        )
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut rotation = self.rotation * other.rotation;
        rotation.renormalize();
        Pose {
            translation: self.rotation * other.translation + self.translation,
            rotation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rotation = self.rotation.inverse();
        Pose {
            translation: -(rotation * self.translation),
            rotation,
        }
    }

    /// `inverse(self) ∘ other`: `other` expressed in the frame of `self`.
    pub fn relative(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = self.rotation.to_homogeneous();
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `(tx ty tz qw qx qy qz)`, the row layout used by every CSV log.
    pub fn to_row(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        [
            self.translation.x,
            self.translation.y,
            self.translation.z,
            q.w,
            q.i,
            q.j,
            q.k,
        ]
    }

    pub fn from_row(row: &[f64; 7]) -> Pose {
        Pose::from_wxyz(
            Vec3::new(row[0], row[1], row[2]),
            row[3],
            row[4],
            row[5],
            row[6],
        )
    }

    pub fn is_finite(&self) -> bool {
        self.to_row().iter().all(|v| v.is_finite())
    }

    /// Translation distance between two poses.
    pub fn translation_distance(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Approximate equality: translation within `tol` and quaternions within
    /// `tol` up to the double-cover sign.
    pub fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        self.translation_distance(other) <= tol && rotation_distance(self, other) <= tol
    }
}

impl From<Pose> for [f64; 7] {
    fn from(p: Pose) -> Self {
        p.to_row()
    }
}

impl From<[f64; 7]> for Pose {
    fn from(row: [f64; 7]) -> Self {
        Pose::from_row(&row)
    }
}

/// `min(|q1 - q2|, |q1 + q2|)` over the 4 quaternion components.
pub fn rotation_distance(a: &Pose, b: &Pose) -> f64 {
    let qa = a.rotation.quaternion().coords;
    let qb = b.rotation.quaternion().coords;
    (qa - qb).norm().min((qa + qb).norm())
}

/// Rigid transform between the pose-sensor frame and the arm base frame.
///
/// The wrapped pose is the arm base expressed in the sensor frame, so it
/// maps arm-frame coordinates into sensor-frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Extrinsics(pub Pose);

impl Extrinsics {
    pub fn identity() -> Self {
        Self(Pose::identity())
    }

    pub fn pose(&self) -> &Pose {
        &self.0
    }

    /// Conjugates a sensor-frame motion into the arm frame: `E⁻¹ ∘ m ∘ E`.
    pub fn conjugate(&self, motion: &Pose) -> Pose {
        self.0.inverse().compose(motion).compose(&self.0)
    }
}
