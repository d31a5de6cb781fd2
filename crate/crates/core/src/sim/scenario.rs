//! Scenario configuration, loaded from TOML.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::components::{ArmModel, OraclePolicy, PoseSensor};
use super::profile::MotionProfile;
use crate::action::EnsembleConfig;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::latency::PinholeCamera;
use crate::predictor::{PredictorConfig, DEFAULT_INPUT_FRAMES, DEFAULT_OUTPUT_FRAMES};
use crate::stabilizer::GenerationPose;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    /// Keep the end effector at a fixed world point.
    EndHold {
        point: [f64; 3],
        /// Marker stddev (m) at or below which the run counts as a success.
        #[serde(default = "default_hold_threshold")]
        threshold: f64,
    },
    /// Bring the end effector within `threshold` of a world point and keep
    /// it there for `hold_time` seconds.
    Reach {
        target: [f64; 3],
        #[serde(default = "default_reach_threshold")]
        threshold: f64,
        #[serde(default = "default_hold_time")]
        hold_time: f64,
    },
}

fn default_hold_threshold() -> f64 {
    0.01
}
fn default_reach_threshold() -> f64 {
    0.04
}
fn default_hold_time() -> f64 {
    2.0
}

impl Default for Task {
    fn default() -> Self {
        Self::end_hold()
    }
}

impl Task {
    pub fn end_hold() -> Self {
        Self::EndHold {
            point: [0.4, 0.0, 0.2],
            threshold: default_hold_threshold(),
        }
    }

    pub fn reach() -> Self {
        Self::Reach {
            target: [0.45, 0.1, 0.15],
            threshold: default_reach_threshold(),
            hold_time: default_hold_time(),
        }
    }

    /// The world point the policy is steering toward.
    pub fn world_target(&self) -> Vec3 {
        match self {
            Self::EndHold { point, .. } => Vec3::from(*point),
            Self::Reach { target, .. } => Vec3::from(*target),
        }
    }

    pub fn is_end_hold(&self) -> bool {
        matches!(self, Self::EndHold { .. })
    }
}

/// Pipeline configuration compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Synchronous: observe, wait for inference, execute the chunk open loop.
    Baseline,
    /// Asynchronous chunks through the action manager, no compensation.
    Manager,
    /// Manager plus stabilizer with the latency fixed at 0 s.
    StabilizerZero,
    /// Manager plus stabilizer with the latency fixed at 0.5 s.
    StabilizerHalf,
    /// Manager plus stabilizer with the configured or measured latency.
    #[default]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::Manager,
        Variant::StabilizerZero,
        Variant::StabilizerHalf,
        Variant::Full,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Manager => "manager",
            Self::StabilizerZero => "stabilizer_zero",
            Self::StabilizerHalf => "stabilizer_half",
            Self::Full => "full",
        }
    }

    pub fn uses_manager(&self) -> bool {
        !matches!(self, Self::Baseline)
    }

    pub fn uses_stabilizer(&self) -> bool {
        matches!(self, Self::StabilizerZero | Self::StabilizerHalf | Self::Full)
    }

    /// Latency the stabilizer runs with; `configured` is used by `Full`.
    pub fn stabilizer_latency(&self, configured: f64) -> Option<f64> {
        match self {
            Self::StabilizerZero => Some(0.0),
            Self::StabilizerHalf => Some(0.5),
            Self::Full => Some(configured),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(Self::Baseline),
            "manager" | "+manager" => Ok(Self::Manager),
            "stabilizer_zero" | "stabilizer-0" | "latency=0" => Ok(Self::StabilizerZero),
            "stabilizer_half" | "stabilizer-0.5" | "latency=0.5" => Ok(Self::StabilizerHalf),
            "full" => Ok(Self::Full),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Which motion predictor feeds the stabilizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorChoice {
    /// Ground-truth future from the simulated platform.
    #[default]
    Oracle,
    ConstantVelocity,
    Hold,
    /// Trained network loaded from a checkpoint file.
    Learned { checkpoint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilizerSettings {
    /// Latency for the `full` variant; the exact simulated latency if unset.
    pub latency: Option<f64>,
    pub generation: GenerationPose,
    pub predictor: PredictorChoice,
    /// Window lengths for the non-learned predictors.
    pub input_frames: usize,
    pub output_frames: usize,
}

impl Default for StabilizerSettings {
    fn default() -> Self {
        Self {
            latency: None,
            generation: GenerationPose::Logged,
            predictor: PredictorChoice::Oracle,
            input_frames: DEFAULT_INPUT_FRAMES,
            output_frames: DEFAULT_OUTPUT_FRAMES,
        }
    }
}

/// Rate and window presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 200 Hz poses, 1 s in, 0.5 s out.
    #[default]
    Paper,
    /// 50 Hz poses, same windows in seconds, smaller network.
    Desk,
}

impl Profile {
    pub fn predictor_config(&self) -> PredictorConfig {
        match self {
            Self::Paper => PredictorConfig::paper(),
            Self::Desk => PredictorConfig::desk(),
        }
    }

    pub fn apply(&self, scenario: &mut Scenario) {
        let cfg = self.predictor_config();
        scenario.sensor.frequency = cfg.frequency;
        scenario.stabilizer.input_frames = cfg.input_frames;
        scenario.stabilizer.output_frames = cfg.output_frames;
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "paper" => Ok(Self::Paper),
            "desk" => Ok(Self::Desk),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub seed: u64,
    /// Virtual seconds simulated.
    pub duration: f64,
    pub control_hz: f64,
    /// End-hold statistics ignore the first `settle_time` seconds.
    pub settle_time: f64,
    pub variant: Variant,
    pub motion: MotionProfile,
    pub sensor: PoseSensor,
    pub arm: ArmModel,
    pub policy: OraclePolicy,
    pub task: Task,
    pub ensemble: EnsembleConfig,
    pub stabilizer: StabilizerSettings,
    /// Third-view camera; by default 1 m above the task point looking down.
    pub camera: Option<PinholeCamera>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 0,
            duration: 30.0,
            control_hz: 50.0,
            settle_time: 1.0,
            variant: Variant::Full,
            motion: MotionProfile::default(),
            sensor: PoseSensor::default(),
            arm: ArmModel::default(),
            policy: OraclePolicy::default(),
            task: Task::end_hold(),
            ensemble: EnsembleConfig::default(),
            stabilizer: StabilizerSettings::default(),
            camera: None,
        }
    }
}

impl Scenario {
    /// End-hold on the default sinusoid.
    pub fn end_hold() -> Self {
        Self::default()
    }

    /// Reach on the default sinusoid.
    pub fn reach() -> Self {
        Self {
            duration: 12.0,
            task: Task::reach(),
            ..Self::default()
        }
    }

    pub fn with_profile(mut self, profile: Profile) -> Self {
        profile.apply(&mut self);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return bad(format!("duration must be >= 0, got {}", self.duration));
        }
        if !(self.control_hz > 0.0) || !(self.settle_time >= 0.0) {
            return bad("control_hz must be > 0 and settle_time >= 0".into());
        }
        self.motion.validate()?;
        self.sensor.validate()?;
        self.arm.validate()?;
        self.policy.validate()?;
        self.ensemble.validate()?;
        let ratio = self.control_hz / self.policy.rate;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return bad(format!(
                "control rate {} Hz is not a multiple of the policy rate {} Hz",
                self.control_hz, self.policy.rate
            ));
        }
        if self.stabilizer.input_frames == 0 || self.stabilizer.output_frames == 0 {
            return bad("predictor windows must be non-empty".into());
        }
        if let Some(l) = self.stabilizer.latency {
            if !(l >= 0.0) {
                return bad(format!("stabilizer latency must be >= 0, got {l}"));
            }
        }
        match self.task {
            Task::EndHold { threshold, .. } if !(threshold >= 0.0) => {
                bad("end_hold threshold must be >= 0".into())
            }
            Task::Reach {
                threshold,
                hold_time,
                ..
            } if !(threshold > 0.0) || !(hold_time >= 0.0) => {
                bad("reach needs threshold > 0 and hold_time >= 0".into())
            }
            _ => Ok(()),
        }
    }

    /// Delay from a pose sample being taken to a command computed from it
    /// taking effect, for ticks on the pose grid.
    pub fn exact_latency(&self) -> f64 {
        self.sensor.quantized_latency() + self.arm.actuation_lag
    }

    /// Latency the stabilizer uses for this scenario's variant.
    pub fn stabilizer_latency(&self) -> Option<f64> {
        self.variant
            .stabilizer_latency(self.stabilizer.latency.unwrap_or_else(|| self.exact_latency()))
    }

    pub fn camera(&self) -> PinholeCamera {
        self.camera
            .unwrap_or_else(|| PinholeCamera::looking_down_at(self.task.world_target(), 1.0))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}
