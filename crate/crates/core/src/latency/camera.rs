//! Fixed third-view pinhole camera.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera frame in the world; the optical axis is camera +z.
    pub pose: Pose,
}

impl Default for PinholeCamera {
    fn default() -> Self {
        Self::looking_down_at(Vec3::zeros(), 1.0)
    }
}

impl PinholeCamera {
    /// 640x480 camera `height` meters above `point`, optical axis pointing
    /// down (world -z), image x along world +x.
    pub fn looking_down_at(point: Vec3, height: f64) -> Self {
        let pose = Pose::from_axis_angle(
            Vec3::x(),
            std::f64::consts::PI,
            point + Vec3::new(0.0, 0.0, height),
        );
        Self {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            pose,
        }
    }

    /// Projects a point given in camera coordinates.
    pub fn project_camera_point(&self, p: &Vec3) -> Result<[f64; 2]> {
        if p.z <= 0.0 {
            return Err(Error::BehindCamera { depth: p.z });
        }
        Ok([self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy])
    }
}

/// Pinhole projection of a world point into pixel coordinates `(u, v)`.
pub fn project_marker(camera: &PinholeCamera, world_point: &Vec3) -> Result<[f64; 2]> {
    let p = camera.pose.inverse().transform_point(world_point);
    camera.project_camera_point(&p)
}
