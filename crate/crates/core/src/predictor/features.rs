//! 6-D pose features: translation followed by the rotation vector
//! (quaternion log map).

use std::f64::consts::PI;

use nalgebra::UnitQuaternion;

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

pub type PoseFeature = [f64; 6];

/// Rotations closer than this to π are rejected by [`encode_pose`].
pub const BRANCH_CUT_MARGIN: f64 = 1e-6;

/// Rotation vector of a unit quaternion, taking the short way round.
pub fn rotation_vector(q: &UnitQuaternion<f64>) -> Vec3 {
    let q = q.quaternion();
    let v: Vec3 = q.vector().into_owned();
    let (w, v) = if q.w < 0.0 { (-q.w, -v) } else { (q.w, v) };
    let s = v.norm();
    if s < 1e-12 {
        // angle ≈ 2s/w, direction v/s
        return v * (2.0 / w);
    }
    let angle = 2.0 * s.atan2(w);
    v * (angle / s)
}

pub fn rotation_from_vector(rv: &Vec3) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*rv)
}

pub fn encode_pose(p: &Pose) -> Result<PoseFeature> {
    let rv = rotation_vector(&p.rotation);
    let angle = rv.norm();
    if angle > PI - BRANCH_CUT_MARGIN {
        return Err(Error::RotationTooLarge { angle });
    }
    let t = p.translation;
    Ok([t.x, t.y, t.z, rv.x, rv.y, rv.z])
}

pub fn decode_pose(f: &PoseFeature) -> Pose {
    Pose::new(
        Vec3::new(f[0], f[1], f[2]),
        rotation_from_vector(&Vec3::new(f[3], f[4], f[5])),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_translation() {
        assert_eq!(encode_pose(&Pose::identity()).unwrap(), [0.0; 6]);
        assert_eq!(
            encode_pose(&Pose::from_translation(0.01, 0.0, 0.0)).unwrap(),
            [0.01, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn z_rotation_log_map() {
        // q = (cos 0.05, 0, 0, sin 0.05) ⇒ 2·atan2(sin 0.05, cos 0.05) = 0.1
        let p = Pose::from_wxyz(Vec3::zeros(), 0.05f64.cos(), 0.0, 0.0, 0.05f64.sin());
        let f = encode_pose(&p).unwrap();
        assert!((f[5] - 0.1).abs() < 1e-15);
        assert!(f[3].abs() < 1e-15 && f[4].abs() < 1e-15);
        // the negated quaternion is the same rotation
        let neg = Pose::from_wxyz(Vec3::zeros(), -(0.05f64.cos()), 0.0, 0.0, -(0.05f64.sin()));
        assert!((encode_pose(&neg).unwrap()[5] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn branch_cut_rejected() {
        let p = Pose::from_axis_angle(Vec3::x(), PI, Vec3::zeros());
        assert!(matches!(encode_pose(&p), Err(Error::RotationTooLarge { .. })));
    }

    #[test]
    fn tiny_rotation_round_trip() {
        let p = Pose::from_axis_angle(Vec3::new(1.0, 2.0, 3.0), 1e-14, Vec3::zeros());
        let back = decode_pose(&encode_pose(&p).unwrap());
        assert!(back.approx_eq(&p, 1e-12));
    }
}
