use basestab::action::{Action, ActionBuffer};
use basestab::history::{PoseHistory, PoseSample};
use basestab::predictor::{MotionPredictor, RelativePoseSeq};
use basestab::stabilizer::{execution_index, GenerationPose};
use basestab::{Error, Extrinsics, Pose, Result, Stabilizer, Vec3};
use nalgebra::{Matrix4, UnitQuaternion, Vector4};
use proptest::prelude::*;

const F: f64 = 100.0;
const NOW: f64 = 2.0;

#[derive(Debug, Clone, Copy)]
struct Motion {
    amp: [f64; 3],
    axis: [f64; 3],
    angle: f64,
    omega: f64,
}

impl Motion {
    fn at(&self, t: f64) -> Pose {
        let s = (self.omega * t).sin();
        let axis = Vec3::from(self.axis);
        let axis = if axis.norm() > 1e-6 { axis.normalize() } else { Vec3::z() };
        Pose::from_axis_angle(axis, self.angle * s, Vec3::from(self.amp) * s)
    }

    fn history(&self) -> PoseHistory {
        let n = (NOW * F).round() as usize;
        PoseHistory::from_samples((0..=n).map(|i| {
            let t = i as f64 / F;
            PoseSample { time: t, pose: self.at(t) }
        }))
    }
}

/// Reads the true future of the motion relative to the reference pose.
struct Truth {
    motion: Motion,
    output: usize,
}

impl MotionPredictor for Truth {
    fn input_frames(&self) -> usize {
        20
    }

    fn output_frames(&self) -> usize {
        self.output
    }

    fn predict(&self, input: &RelativePoseSeq) -> Result<RelativePoseSeq> {
        let inv = self.motion.at(input.base_time).inverse();
        let poses = (1..=self.output)
            .map(|i| inv.compose(&self.motion.at(input.base_time + i as f64 / F)))
            .collect();
        Ok(RelativePoseSeq::future(input.base_time, F, poses))
    }
}

fn matrix(p: &Pose) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(p.rotation.to_rotation_matrix().matrix());
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.translation);
    m
}

fn apply(m: &Matrix4<f64>, x: &Vec3) -> Vec3 {
    let h = m * Vector4::new(x.x, x.y, x.z, 1.0);
    Vec3::new(h.x, h.y, h.z)
}

fn motion_strategy() -> impl Strategy<Value = Motion> {
    (
        prop::array::uniform3(-0.1..0.1f64),
        prop::array::uniform3(-1.0..1.0f64),
        -0.3..0.3f64,
        1.0..6.0f64,
    )
        .prop_map(|(amp, axis, angle, omega)| Motion { amp, axis, angle, omega })
}

fn extrinsics_strategy() -> impl Strategy<Value = Extrinsics> {
    (prop::array::uniform3(-0.3..0.3f64), prop::array::uniform3(-3.0..3.0f64)).prop_map(|(t, r)| {
        Extrinsics(Pose::new(Vec3::from(t), UnitQuaternion::from_scaled_axis(Vec3::from(r))))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// The compensated target, executed at the predicted platform pose, lands
    /// on the world point the raw action meant at generation time.
    #[test]
    fn compensation_preserves_world_target(
        motion in motion_strategy(),
        e in extrinsics_strategy(),
        latency_frames in 0usize..50,
        lag_frames in 0usize..100,
        target in prop::array::uniform3(-0.5..0.5f64),
    ) {
        let t_gen = NOW - lag_frames as f64 / F;
        let latency = latency_frames as f64 / F;
        let a = Action::new(Vec3::from(target));
        let buf = ActionBuffer::from_entries(t_gen, 0.1, 3, 0, [(a, 1.0), (a, 1.0)]);
        let stab = Stabilizer { extrinsics: e, latency, pose_frequency: F, generation: GenerationPose::Logged };
        let truth = Truth { motion, output: 60 };
        let out = stab.stabilized_action(&buf, t_gen, &motion.history(), &truth).unwrap();

        let t_exec = NOW + execution_index(latency, F) as f64 / F;
        let b_gen = matrix(&motion.at(t_gen)) * matrix(&e.0);
        let b_exec = matrix(&motion.at(t_exec)) * matrix(&e.0);
        let world = apply(&b_gen, &a.position);
        let want = apply(&b_exec.try_inverse().unwrap(), &world);
        prop_assert!((out.compensated.position - want).norm() < 1e-9, "{:?} vs {:?}", out.compensated.position, want);
        prop_assert!((apply(&b_exec, &out.compensated.position) - world).norm() < 1e-9);
        prop_assert!(out.predicted_pose.approx_eq(&motion.at(t_exec), 1e-9));
    }
}

#[test]
fn window_mode_rejects_actions_older_than_the_window() {
    let motion = Motion { amp: [0.05, 0.0, 0.0], axis: [0.0, 0.0, 1.0], angle: 0.0, omega: 3.0 };
    let a = Action::at(0.3, 0.0, 0.2);
    let truth = Truth { motion, output: 30 };
    let mut stab = Stabilizer { extrinsics: Extrinsics::identity(), latency: 0.1, pose_frequency: F, generation: GenerationPose::Window };
    let old = NOW - 0.5; // 50 frames back, window holds 20
    let buf = ActionBuffer::from_entries(old, 0.1, 3, 0, [(a, 1.0)]);
    let err = stab.stabilized_action(&buf, old, &motion.history(), &truth).unwrap_err();
    assert!(matches!(err, Error::IndexOutOfRange { .. }), "{err:?}");
    stab.generation = GenerationPose::Logged;
    assert!(stab.stabilized_action(&buf, old, &motion.history(), &truth).is_ok());
}

#[test]
fn latency_beyond_prediction_horizon_is_an_error() {
    let motion = Motion { amp: [0.05, 0.0, 0.0], axis: [0.0, 0.0, 1.0], angle: 0.0, omega: 3.0 };
    let truth = Truth { motion, output: 30 };
    let stab = Stabilizer { extrinsics: Extrinsics::identity(), latency: 0.5, pose_frequency: F, generation: GenerationPose::Logged };
    let buf = ActionBuffer::from_entries(NOW, 0.1, 3, 0, [(Action::at(0.1, 0.0, 0.0), 1.0)]);
    assert!(matches!(
        stab.stabilized_action(&buf, NOW, &motion.history(), &truth),
        Err(Error::IndexOutOfRange { .. })
    ));
}

#[test]
fn static_platform_leaves_actions_untouched() {
    let motion = Motion { amp: [0.0; 3], axis: [0.0, 0.0, 1.0], angle: 0.0, omega: 1.0 };
    let truth = Truth { motion, output: 60 };
    let stab = Stabilizer {
        extrinsics: Extrinsics(Pose::from_axis_angle(Vec3::z(), 1.0, Vec3::new(0.1, 0.2, 0.0))),
        latency: 0.3,
        pose_frequency: F,
        generation: GenerationPose::Logged,
    };
    let a = Action::at(0.4, -0.1, 0.2).with_gripper(0.7);
    let buf = ActionBuffer::from_entries(1.5, 0.1, 3, 0, [(a, 1.0), (Action::at(0.5, 0.0, 0.2), 1.0)]);
    let out = stab.stabilized_action(&buf, 1.55, &motion.history(), &truth).unwrap();
    assert!((out.compensated.position - out.raw.position).norm() < 1e-12);
    assert_eq!(out.compensated.gripper, out.raw.gripper);
}
