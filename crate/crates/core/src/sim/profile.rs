//! Platform motion profiles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

/// Seeded profiles are generated on a fixed grid starting here, so the pose
/// at a given time does not depend on how long a scenario runs.
pub const NOISE_ORIGIN: f64 = -10.0;
/// Generation step of seeded profiles.
pub const NOISE_DT: f64 = 1e-3;
/// Filter state is run this long before `NOISE_ORIGIN` to reach steady state.
const NOISE_BURN_IN: f64 = 20.0;
/// Smoothing time constant applied to the drift process.
const DRIFT_SMOOTHING: f64 = 0.1;

fn default_axis() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

fn default_shake_axes() -> [f64; 3] {
    [1.0, 0.5, 0.2]
}

/// Motion of the pose-sensor frame in the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MotionProfile {
    Static,
    /// Triangle wave between 0 and `stroke` along `axis` at constant speed.
    Leadscrew {
        speed: f64,
        stroke: f64,
        #[serde(default = "default_axis")]
        axis: [f64; 3],
    },
    /// `amplitude * sin(2π f t + phase)` along `axis`.
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        #[serde(default = "default_axis")]
        axis: [f64; 3],
        #[serde(default)]
        phase: f64,
    },
    /// Seeded white noise through a second-order low-pass, scaled so each
    /// axis has standard deviation `rms * axes[i]`.
    FilteredShake {
        bandwidth: f64,
        rms: f64,
        seed: u64,
        #[serde(default = "default_shake_axes")]
        axes: [f64; 3],
        /// Yaw about the sensor z axis, radians.
        #[serde(default)]
        yaw_rms: f64,
    },
    /// Ornstein-Uhlenbeck drift per axis, lightly smoothed.
    UavDrift {
        rms: f64,
        correlation_time: f64,
        seed: u64,
        #[serde(default)]
        yaw_rms: f64,
    },
}

impl Default for MotionProfile {
    fn default() -> Self {
        Self::sinusoid(0.05, 0.5)
    }
}

impl MotionProfile {
    pub fn leadscrew() -> Self {
        Self::Leadscrew {
            speed: 0.12,
            stroke: 0.3,
            axis: default_axis(),
        }
    }

    pub fn sinusoid(amplitude: f64, frequency: f64) -> Self {
        Self::Sinusoid {
            amplitude,
            frequency,
            axis: default_axis(),
            phase: 0.0,
        }
    }

    pub fn filtered_shake(seed: u64) -> Self {
        Self::FilteredShake {
            bandwidth: 1.0,
            rms: 0.03,
            seed,
            axes: default_shake_axes(),
            yaw_rms: 0.0,
        }
    }

    pub fn uav_drift(seed: u64) -> Self {
        Self::UavDrift {
            rms: 0.03,
            correlation_time: 1.0,
            seed,
            yaw_rms: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("motion profile: {msg}")));
        match self {
            Self::Static => Ok(()),
            Self::Leadscrew { speed, stroke, axis } => {
                if !(*speed > 0.0 && *speed <= 1.0) || !(*stroke > 0.0) {
                    return bad("leadscrew needs 0 < speed <= 1 m/s and stroke > 0");
                }
                unit(axis).map(|_| ())
            }
            Self::Sinusoid {
                amplitude,
                frequency,
                axis,
                phase,
            } => {
                if !(*amplitude >= 0.0) || !(*frequency >= 0.0) || !phase.is_finite() {
                    return bad("sinusoid needs amplitude >= 0 and frequency >= 0");
                }
                if 2.0 * std::f64::consts::PI * amplitude * frequency > 1.0 {
                    return bad("sinusoid peak speed exceeds 1 m/s");
                }
                unit(axis).map(|_| ())
            }
            Self::FilteredShake {
                bandwidth,
                rms,
                axes,
                yaw_rms,
                ..
            } => {
                if !(*bandwidth > 0.0 && *bandwidth < 0.5 / NOISE_DT) || !(*rms >= 0.0) {
                    return bad("filtered_shake needs bandwidth in (0, 500) Hz and rms >= 0");
                }
                if axes.iter().any(|a| !a.is_finite() || *a < 0.0) || !(*yaw_rms >= 0.0) {
                    return bad("filtered_shake axis gains and yaw_rms must be >= 0");
                }
                Ok(())
            }
            Self::UavDrift {
                rms,
                correlation_time,
                yaw_rms,
                ..
            } => {
                if !(*rms >= 0.0) || !(*correlation_time > 0.0) || !(*yaw_rms >= 0.0) {
                    return bad("uav_drift needs rms >= 0 and correlation_time > 0");
                }
                Ok(())
            }
        }
    }

    /// Dominant translation axis, when the profile has one.
    pub fn primary_axis(&self) -> Option<Vec3> {
        match self {
            Self::Leadscrew { axis, .. } | Self::Sinusoid { axis, .. } => unit(axis).ok(),
            Self::FilteredShake { axes, .. } => unit(axes)
                .ok()
                .map(|_| {
                    let i = (0..3).max_by(|a, b| axes[*a].total_cmp(&axes[*b])).unwrap();
                    let mut v = Vec3::zeros();
                    v[i] = 1.0;
                    v
                }),
            _ => None,
        }
    }

    /// Returns the profile with its seed replaced (seeded kinds only).
    pub fn reseeded(&self, new_seed: u64) -> Self {
        let mut p = self.clone();
        match &mut p {
            Self::FilteredShake { seed, .. } | Self::UavDrift { seed, .. } => *seed = new_seed,
            _ => {}
        }
        p
    }
}

fn unit(axis: &[f64; 3]) -> Result<Vec3> {
    let v = Vec3::from(*axis);
    let n = v.norm();
    if !(n > 1e-12) || !n.is_finite() {
        return Err(Error::Config(format!("axis {axis:?} has no direction")));
    }
    Ok(v / n)
}

/// Samples of a seeded profile: `(x, y, z, yaw)` every `NOISE_DT` seconds
/// from `NOISE_ORIGIN`.
#[derive(Debug, Clone, PartialEq)]
struct NoiseTable {
    values: Vec<[f64; 4]>,
}

impl NoiseTable {
    fn sample(&self, t: f64) -> [f64; 4] {
        let x = ((t - NOISE_ORIGIN) / NOISE_DT).max(0.0);
        let i = (x.floor() as usize).min(self.values.len() - 1);
        let j = (i + 1).min(self.values.len() - 1);
        let lambda = (x - i as f64).clamp(0.0, 1.0);
        let (a, b) = (self.values[i], self.values[j]);
        std::array::from_fn(|k| a[k] + lambda * (b[k] - a[k]))
    }
}

/// Two cascaded one-pole low-pass stages with coefficients `a1`, `a2`.
#[derive(Debug, Clone, Copy)]
struct Cascade {
    a1: f64,
    a2: f64,
}

impl Cascade {
    fn step(&self, state: &mut [f64; 2], input: f64) -> f64 {
        state[0] += self.a1 * (input - state[0]);
        state[1] += self.a2 * (state[0] - state[1]);
        state[1]
    }

    /// Stationary output standard deviation for unit white input, from the
    /// energy of the impulse response.
    fn stationary_std(&self) -> f64 {
        let mut s = [0.0; 2];
        let mut energy = 0.0;
        let mut y = self.step(&mut s, 1.0);
        let mut n = 0usize;
        loop {
            energy += y * y;
            y = self.step(&mut s, 0.0);
            n += 1;
            if (y.abs() < 1e-12 && n > 10) || n > 50_000_000 {
                break;
            }
        }
        energy.sqrt()
    }
}

fn one_pole(time_constant: f64) -> f64 {
    1.0 - (-NOISE_DT / time_constant).exp()
}

fn generate(cascade: Cascade, scales: [f64; 4], seed: u64, t_max: f64) -> NoiseTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm = cascade.stationary_std();
    let mut state = [[0.0f64; 2]; 4];
    let burn = (NOISE_BURN_IN / NOISE_DT).round() as usize;
    let n = ((t_max - NOISE_ORIGIN) / NOISE_DT).ceil().max(1.0) as usize + 2;
    let mut values = Vec::with_capacity(n);
    for k in 0..burn + n {
        let mut row = [0.0; 4];
        for (c, s) in state.iter_mut().enumerate() {
            let w: f64 = StandardNormal.sample(&mut rng);
            row[c] = cascade.step(s, w) / norm * scales[c];
        }
        if k >= burn {
            values.push(row);
        }
    }
    NoiseTable { values }
}

/// Evaluates a profile. Seeded kinds are tabulated once on construction for
/// times up to `t_max`; later times hold the last value.
#[derive(Debug, Clone, PartialEq)]
pub struct Platform {
    profile: MotionProfile,
    table: Option<NoiseTable>,
}

impl Platform {
    pub fn new(profile: &MotionProfile, t_max: f64) -> Result<Self> {
        profile.validate()?;
        let table = match *profile {
            MotionProfile::FilteredShake {
                bandwidth,
                rms,
                seed,
                axes,
                yaw_rms,
            } => {
                let a = 1.0 - (-2.0 * std::f64::consts::PI * bandwidth * NOISE_DT).exp();
                let scales = [rms * axes[0], rms * axes[1], rms * axes[2], yaw_rms];
                Some(generate(Cascade { a1: a, a2: a }, scales, seed, t_max))
            }
            MotionProfile::UavDrift {
                rms,
                correlation_time,
                seed,
                yaw_rms,
            } => {
                let cascade = Cascade {
                    a1: one_pole(correlation_time),
                    a2: one_pole(DRIFT_SMOOTHING),
                };
                Some(generate(cascade, [rms, rms, rms, yaw_rms], seed, t_max))
            }
            _ => None,
        };
        Ok(Self {
            profile: profile.clone(),
            table,
        })
    }

    pub fn profile(&self) -> &MotionProfile {
        &self.profile
    }

    pub fn pose(&self, t: f64) -> Pose {
        match (&self.profile, &self.table) {
            (_, Some(table)) => {
                let [x, y, z, yaw] = table.sample(t);
                Pose::from_axis_angle(Vec3::z(), yaw, Vec3::new(x, y, z))
            }
            (MotionProfile::Leadscrew { speed, stroke, axis }, None) => {
                let period = 2.0 * stroke / speed;
                let travel = t.rem_euclid(period) * speed;
                let s = if travel <= *stroke { travel } else { 2.0 * stroke - travel };
                translation(unit(axis).unwrap() * s)
            }
            (
                MotionProfile::Sinusoid {
                    amplitude,
                    frequency,
                    axis,
                    phase,
                },
                None,
            ) => {
                let s = amplitude * (2.0 * std::f64::consts::PI * frequency * t + phase).sin();
                translation(unit(axis).unwrap() * s)
            }
            _ => Pose::identity(),
        }
    }
}

fn translation(v: Vec3) -> Pose {
    Pose::new(v, nalgebra::UnitQuaternion::identity())
}

/// Pose of `profile` at time `t`.
pub fn platform_pose(profile: &MotionProfile, t: f64) -> Result<Pose> {
    Ok(Platform::new(profile, t.max(0.0) + 1.0)?.pose(t))
}
