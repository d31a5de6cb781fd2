//! Latency calibration by an end-effector-hold warm-up.
//!
//! For each candidate latency the stabilizer runs an end-hold with that
//! latency, a fixed camera watches the end effector and the candidate is
//! scored by the ratio of summed marker pixel motion to summed platform
//! motion. The estimate is the candidate with the smallest ratio.

pub mod camera;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use camera::{project_marker, PinholeCamera};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Minimum summed platform displacement for a meaningful ratio.
pub const MIN_PLATFORM_MOTION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencySearchConfig {
    pub min: f64,
    pub max: f64,
    pub step: f64,
    /// Seconds of end-hold per candidate.
    pub dwell: f64,
    /// Pixel noise added to every projection (standard deviation).
    pub pixel_noise: f64,
    pub noise_seed: u64,
}

impl Default for LatencySearchConfig {
    fn default() -> Self {
        Self {
            min: 0.0,
            max: 0.5,
            step: 0.025,
            dwell: 5.0,
            pixel_noise: 0.0,
            noise_seed: 0,
        }
    }
}

impl LatencySearchConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min >= 0.0
            && self.min < self.max
            && self.step > 0.0
            && self.dwell > 0.0
            && self.pixel_noise >= 0.0
            && [self.min, self.max, self.step, self.dwell].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid latency search config {self:?}")))
        }
    }

    /// `min, min + step, ...` up to and including `max` (within 1e-9).
    pub fn grid(&self) -> Vec<f64> {
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|k| self.min + k as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityMetric {
    pub delta_t: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyEstimate {
    pub delta_t: f64,
    pub curve: Vec<StabilityMetric>,
}

impl LatencyEstimate {
    /// Curve CSV: `delta_t,ratio`.
    pub fn write_curve_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["delta_t", "ratio"])?;
        for m in &self.curve {
            w.write_record([m.delta_t.to_string(), m.ratio.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// What one end-hold dwell produced: marker world positions and the
/// sensed platform translations, sampled on the same ticks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EndHoldObservation {
    pub marker: Vec<Vec3>,
    pub platform: Vec<Vec3>,
}

/// A scenario that can run a fresh end-hold with the stabilizer set to a
/// given latency. Every call must start from identical initial conditions.
pub trait EndHoldRig {
    fn camera(&self) -> PinholeCamera;
    fn run_end_hold(&self, latency: f64, dwell: f64) -> Result<EndHoldObservation>;
}

/// Σ|Δpixel| / Σ|Δplatform| over consecutive samples.
pub fn velocity_ratio(
    camera: &PinholeCamera,
    obs: &EndHoldObservation,
    pixel_noise: f64,
    noise_seed: u64,
) -> Result<f64> {
    if obs.marker.len() != obs.platform.len() {
        return Err(Error::DimensionMismatch {
            expected: obs.platform.len(),
            got: obs.marker.len(),
        });
    }
    let platform: f64 = obs.platform.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    if !(platform >= MIN_PLATFORM_MOTION) {
        return Err(Error::DegenerateMotion);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let noise = Normal::new(0.0, pixel_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let pixels = obs
        .marker
        .iter()
        .map(|m| {
            let [u, v] = project_marker(camera, m)?;
            if pixel_noise > 0.0 {
                Ok([u + noise.sample(&mut rng), v + noise.sample(&mut rng)])
            } else {
                Ok([u, v])
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let pixel: f64 = pixels
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum();
    Ok(pixel / platform)
}

pub fn score_candidate(
    dt: f64,
    rig: &dyn EndHoldRig,
    cfg: &LatencySearchConfig,
) -> Result<StabilityMetric> {
    let obs = rig.run_end_hold(dt, cfg.dwell)?;
    let ratio = velocity_ratio(&rig.camera(), &obs, cfg.pixel_noise, cfg.noise_seed)?;
    Ok(StabilityMetric { delta_t: dt, ratio })
}

/// Scores every grid point and returns the argmin, preferring the smaller
/// latency on ties. Degenerate candidates are left out of the curve.
pub fn linear_search(rig: &dyn EndHoldRig, cfg: &LatencySearchConfig) -> Result<LatencyEstimate> {
    cfg.validate()?;
    let mut curve = Vec::new();
    for dt in cfg.grid() {
        match score_candidate(dt, rig, cfg) {
            Ok(m) => curve.push(m),
            Err(Error::DegenerateMotion) => {}
            Err(e) => return Err(e),
        }
    }
    let best = curve
        .iter()
        .fold(None::<StabilityMetric>, |best, m| match best {
            Some(b) if b.ratio <= m.ratio => Some(b),
            _ => Some(*m),
        })
        .ok_or(Error::AllDegenerate)?;
    Ok(LatencyEstimate {
        delta_t: best.delta_t,
        curve,
    })
}
