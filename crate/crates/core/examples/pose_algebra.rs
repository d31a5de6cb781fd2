//! Compose, invert and conjugate rigid transforms.
//!
//! ```text
//! cargo run --example pose_algebra
//! ```

use std::f64::consts::FRAC_PI_2;

use basestab::{Extrinsics, Pose, Vec3};

fn main() {
    // platform drifts 5 cm along x and yaws 10 degrees
    let motion = Pose::from_axis_angle(Vec3::z(), 10f64.to_radians(), Vec3::new(0.05, 0.0, 0.0));
    // arm base sits 10 cm ahead of the sensor, rotated a quarter turn
    let e = Extrinsics(Pose::from_axis_angle(Vec3::z(), FRAC_PI_2, Vec3::new(0.1, 0.0, -0.05)));

    let target = Vec3::new(0.4, 0.0, 0.2);
    let seen_from_arm = e.conjugate(&motion.inverse());
    println!("sensor motion      {:?}", motion.to_row());
    println!("inverse            {:?}", motion.inverse().to_row());
    println!("motion in arm frame {:?}", seen_from_arm.to_row());
    println!("target {:?} -> {:?}", target.as_slice(), seen_from_arm.transform_point(&target).as_slice());

    let a = Pose::from_axis_angle(Vec3::x(), 0.3, Vec3::new(1.0, 2.0, 3.0));
    let b = a.compose(&motion);
    println!("a.relative(b) == motion: {}", a.relative(&b).approx_eq(&motion, 1e-12));
    println!("homogeneous:\n{}", motion.to_homogeneous());
}
