//! Pose sensor, kinematic arm, oracle policy and oracle predictor.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::profile::Platform;
use crate::action::{Action, ActionChunk};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::predictor::{MotionPredictor, RelativePoseSeq};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseSensor {
    pub frequency: f64,
    /// Standard deviation of translation noise (m) and rotation-vector
    /// noise (rad).
    pub noise_sigma: f64,
    /// Delay from a pose being true to it being in the history.
    pub sensor_latency: f64,
}

impl Default for PoseSensor {
    fn default() -> Self {
        Self {
            frequency: 200.0,
            noise_sigma: 0.0,
            sensor_latency: 0.13,
        }
    }
}

impl PoseSensor {
    pub fn validate(&self) -> Result<()> {
        if !(self.frequency > 0.0) || !(self.noise_sigma >= 0.0) || !(self.sensor_latency >= 0.0) {
            return Err(Error::Config(format!("invalid sensor {self:?}")));
        }
        Ok(())
    }

    /// Sample delay rounded up to the sample grid: the sample read at a
    /// grid-aligned time `t` is the one taken at `t - quantized_latency()`.
    pub fn quantized_latency(&self) -> f64 {
        (self.sensor_latency * self.frequency - 1e-9).ceil().max(0.0) / self.frequency
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for Workspace {
    fn default() -> Self {
        Self {
            min: [-0.8, -0.8, -0.3],
            max: [0.8, 0.8, 0.8],
        }
    }
}

impl Workspace {
    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        Vec3::from_fn(|i, _| p[i].clamp(self.min[i], self.max[i]))
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmModel {
    /// Arm base pose in the sensor frame.
    pub extrinsics: Pose,
    /// Pure delay between a command and the end effector reaching it.
    pub actuation_lag: f64,
    pub workspace: Workspace,
    /// Initial end-effector position in the base frame for reach tasks.
    pub home: [f64; 3],
}

impl Default for ArmModel {
    fn default() -> Self {
        Self {
            extrinsics: Pose::from_axis_angle(
                Vec3::z(),
                std::f64::consts::FRAC_PI_2,
                Vec3::new(0.1, 0.0, -0.05),
            ),
            actuation_lag: 0.02,
            workspace: Workspace::default(),
            home: [0.0, -0.3, 0.3],
        }
    }
}

impl ArmModel {
    pub fn validate(&self) -> Result<()> {
        let ws = &self.workspace;
        if !(self.actuation_lag >= 0.0)
            || !self.extrinsics.is_finite()
            || (0..3).any(|i| !(ws.min[i] <= ws.max[i]))
        {
            return Err(Error::Config(format!("invalid arm {self:?}")));
        }
        Ok(())
    }
}

/// Lagged command queue: a command issued at `t` takes effect at `t + lag`.
#[derive(Debug, Clone)]
pub(crate) struct Actuator {
    lag: f64,
    queue: VecDeque<(f64, Vec3)>,
    effective: Vec3,
}

impl Actuator {
    pub(crate) fn new(lag: f64, initial: Vec3) -> Self {
        Self {
            lag,
            queue: VecDeque::new(),
            effective: initial,
        }
    }

    pub(crate) fn command(&mut self, now: f64, target: Vec3) {
        self.queue.push_back((now + self.lag, target));
    }

    pub(crate) fn update(&mut self, now: f64) -> Vec3 {
        while let Some(&(t, p)) = self.queue.front() {
            if t <= now + super::TIME_EPS {
                self.effective = p;
                self.queue.pop_front();
            } else {
                break;
            }
        }
        self.effective
    }

    pub(crate) fn effective(&self) -> Vec3 {
        self.effective
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OraclePolicy {
    pub obs_horizon: usize,
    pub action_horizon: usize,
    pub rate: f64,
    pub inference_latency: f64,
    /// End-effector speed cap, m/s.
    pub speed_limit: f64,
}

impl Default for OraclePolicy {
    fn default() -> Self {
        Self {
            obs_horizon: 2,
            action_horizon: 8,
            rate: 5.0,
            inference_latency: 0.2,
            speed_limit: 0.25,
        }
    }
}

impl OraclePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.obs_horizon == 0
            || self.action_horizon == 0
            || !(self.rate > 0.0)
            || !(self.inference_latency >= 0.0)
            || !(self.speed_limit > 0.0)
        {
            return Err(Error::Config(format!("invalid policy {self:?}")));
        }
        Ok(())
    }

    pub fn step_period(&self) -> f64 {
        1.0 / self.rate
    }
}

/// One proprioceptive/visual snapshot, both points in the arm base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationFrame {
    pub time: f64,
    pub ee: Vec3,
    pub target: Vec3,
}

/// The last `obs_horizon` frames, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub frames: Vec<ObservationFrame>,
}

impl Observation {
    pub fn single(time: f64, ee: Vec3, target: Vec3) -> Self {
        Self {
            frames: vec![ObservationFrame { time, ee, target }],
        }
    }

    pub fn latest(&self) -> Option<&ObservationFrame> {
        self.frames.last()
    }
}

/// Straight-line motion from the latest end-effector position toward the
/// latest target, at most `speed_limit / rate` per step and clamped to the
/// workspace.
pub fn oracle_policy_infer(
    policy: &OraclePolicy,
    obs: &Observation,
    workspace: &Workspace,
) -> Result<ActionChunk> {
    policy.validate()?;
    let frame = obs
        .latest()
        .ok_or_else(|| Error::InvalidChunk("observation has no frames".into()))?;
    let offset = frame.target - frame.ee;
    let dist = offset.norm();
    let step = policy.speed_limit / policy.rate;
    let actions = (1..=policy.action_horizon)
        .map(|k| {
            let p = if dist <= k as f64 * step {
                frame.target
            } else {
                frame.ee + offset * (k as f64 * step / dist)
            };
            Action::new(workspace.clamp(&p))
        })
        .collect();
    ActionChunk::new(frame.time, policy.inference_latency, policy.step_period(), actions)
}

/// Test-only predictor that reads the future from the simulated platform.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    pub platform: Arc<Platform>,
    pub input_frames: usize,
    pub output_frames: usize,
}

impl MotionPredictor for OraclePredictor {
    fn input_frames(&self) -> usize {
        self.input_frames
    }

    fn output_frames(&self) -> usize {
        self.output_frames
    }

    fn predict(&self, input: &RelativePoseSeq) -> Result<RelativePoseSeq> {
        let f = input.frequency;
        let t0 = input.base_time;
        let base_inv = self.platform.pose(t0).inverse();
        let poses = (1..=self.output_frames)
            .map(|i| base_inv.compose(&self.platform.pose(t0 + i as f64 / f)))
            .collect();
        Ok(RelativePoseSeq::future(t0, f, poses))
    }
}
