//! Short-horizon platform motion prediction.
//!
//! Every prediction works in the frame of the current platform pose `p0`:
//! the past window holds `p0⁻¹ p(t0 - i/f)` for `i = l0..1` and the output
//! holds `p0⁻¹ p(t0 + i/f)` for `i = 1..l1`.

pub mod checkpoint;
pub mod features;
pub mod network;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::history::PoseHistory;

pub use features::{decode_pose, encode_pose, rotation_vector, PoseFeature};
pub use network::{HeadMode, PredictorConfig, PredictorModel};
pub use train::{gradient_check, train, GradientReport, TrainConfig, TrainReport, Window};

/// Pose stream rate used by default.
pub const DEFAULT_POSE_HZ: f64 = 200.0;
/// 1 s of input at 200 Hz.
pub const DEFAULT_INPUT_FRAMES: usize = 200;
/// 0.5 s of output at 200 Hz.
pub const DEFAULT_OUTPUT_FRAMES: usize = 100;

/// Frames in the constant-velocity baseline's twist average.
const BASELINE_FRAMES: usize = 10;

/// Fixed-rate poses relative to the pose at `base_time`.
///
/// `poses[j]` sits at frame index `first_index + j`; frame 0 is the base
/// pose itself and is never stored (it is the identity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativePoseSeq {
    pub base_time: f64,
    pub frequency: f64,
    pub first_index: i64,
    pub poses: Vec<Pose>,
}

impl RelativePoseSeq {
    pub fn past(base_time: f64, frequency: f64, poses: Vec<Pose>) -> Self {
        let first_index = -(poses.len() as i64);
        Self {
            base_time,
            frequency,
            first_index,
            poses,
        }
    }

    pub fn future(base_time: f64, frequency: f64, poses: Vec<Pose>) -> Self {
        Self {
            base_time,
            frequency,
            first_index: 1,
            poses,
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Relative pose at frame `index`; index 0 is always the identity.
    pub fn at_index(&self, index: i64) -> Option<Pose> {
        if index == 0 {
            return Some(Pose::identity());
        }
        let j = index - self.first_index;
        if j < 0 {
            return None;
        }
        self.poses.get(j as usize).copied()
    }

    pub fn time_of(&self, index: i64) -> f64 {
        self.base_time + index as f64 / self.frequency
    }

    pub fn encode(&self) -> Result<Vec<PoseFeature>> {
        self.poses.iter().map(encode_pose).collect()
    }

    pub fn decode(
        base_time: f64,
        frequency: f64,
        first_index: i64,
        features: &[PoseFeature],
    ) -> Result<Self> {
        if let Some(bad) = features.iter().position(|f| f.iter().any(|v| !v.is_finite())) {
            return Err(Error::Schema(format!("feature frame {bad} is not finite")));
        }
        Ok(Self {
            base_time,
            frequency,
            first_index,
            poses: features.iter().map(decode_pose).collect(),
        })
    }
}

/// Past window of `l0` frames ending just before `now`, relative to the pose
/// at `now`, resampled at `frequency` by nearest-sample selection.
pub fn build_input(
    history: &PoseHistory,
    now: f64,
    l0: usize,
    frequency: f64,
) -> Result<RelativePoseSeq> {
    let tol = 0.5 / frequency + 1e-9;
    let p0 = history.nearest_within(now, tol)?.pose;
    let base_inv = p0.inverse();
    let poses = (1..=l0)
        .rev()
        .map(|i| {
            let t = now - i as f64 / frequency;
            history
                .nearest_within(t, tol)
                .map(|s| base_inv.compose(&s.pose))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RelativePoseSeq::past(now, frequency, poses))
}

/// Ground-truth future window in the same layout a predictor emits.
pub fn build_target(
    history: &PoseHistory,
    now: f64,
    l1: usize,
    frequency: f64,
) -> Result<RelativePoseSeq> {
    let tol = 0.5 / frequency + 1e-9;
    let base_inv = history.nearest_within(now, tol)?.pose.inverse();
    let poses = (1..=l1)
        .map(|i| {
            history
                .nearest_within(now + i as f64 / frequency, tol)
                .map(|s| base_inv.compose(&s.pose))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RelativePoseSeq::future(now, frequency, poses))
}

/// Anything that turns a past window into an `output_frames()`-long future
/// window.
pub trait MotionPredictor: Send + Sync {
    fn input_frames(&self) -> usize;
    fn output_frames(&self) -> usize;
    fn predict(&self, input: &RelativePoseSeq) -> Result<RelativePoseSeq>;
}

/// Repeats the mean per-frame motion of the last few input frames.
pub fn constant_velocity_baseline(input: &RelativePoseSeq, l1: usize) -> Result<RelativePoseSeq> {
    if input.len() < 2 {
        return Err(Error::InsufficientHistory(format!(
            "constant-velocity baseline needs at least 2 frames, got {}",
            input.len()
        )));
    }
    // frames -n..=0, where frame 0 is the identity
    let n = BASELINE_FRAMES.min(input.len());
    let mut frames: Vec<Pose> = input.poses[input.len() - n..].to_vec();
    frames.push(Pose::identity());
    let mut trans = Vec3::zeros();
    let mut rot = Vec3::zeros();
    for pair in frames.windows(2) {
        let step = pair[0].relative(&pair[1]);
        trans += step.translation;
        rot += rotation_vector(&step.rotation);
    }
    let step = Pose::new(
        trans / n as f64,
        features::rotation_from_vector(&(rot / n as f64)),
    );
    let mut poses = Vec::with_capacity(l1);
    let mut acc = Pose::identity();
    for _ in 0..l1 {
        acc = acc.compose(&step);
        poses.push(acc);
    }
    Ok(RelativePoseSeq::future(input.base_time, input.frequency, poses))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstantVelocity {
    pub input_frames: usize,
    pub output_frames: usize,
}

impl MotionPredictor for ConstantVelocity {
    fn input_frames(&self) -> usize {
        self.input_frames
    }

    fn output_frames(&self) -> usize {
        self.output_frames
    }

    fn predict(&self, input: &RelativePoseSeq) -> Result<RelativePoseSeq> {
        constant_velocity_baseline(input, self.output_frames)
    }
}

/// Predicts no motion: every future frame equals the current pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HoldPose {
    pub input_frames: usize,
    pub output_frames: usize,
}

impl MotionPredictor for HoldPose {
    fn input_frames(&self) -> usize {
        self.input_frames
    }

    fn output_frames(&self) -> usize {
        self.output_frames
    }

    fn predict(&self, input: &RelativePoseSeq) -> Result<RelativePoseSeq> {
        Ok(RelativePoseSeq::future(
            input.base_time,
            input.frequency,
            vec![Pose::identity(); self.output_frames],
        ))
    }
}
