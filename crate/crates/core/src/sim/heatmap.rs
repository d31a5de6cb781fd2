//! 2-D histogram of end-effector world positions and its principal axes.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatmapConfig {
    /// Bin edge length, meters.
    pub bin_size: f64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self { bin_size: 0.005 }
    }
}

/// Occupied bins in the world x-y plane. Bin `(i, j)` is centered at
/// `center + (i, j) * bin_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub bin_size: f64,
    pub center: [f64; 2],
    pub bins: BTreeMap<(i64, i64), u64>,
}

impl Heatmap {
    pub fn build(points: &[Vec3], center: [f64; 2], cfg: &HeatmapConfig) -> Result<Self> {
        if !(cfg.bin_size > 0.0) {
            return Err(Error::Config(format!("bin_size must be > 0, got {}", cfg.bin_size)));
        }
        let mut bins = BTreeMap::new();
        for p in points {
            let i = ((p.x - center[0]) / cfg.bin_size + 0.5).floor() as i64;
            let j = ((p.y - center[1]) / cfg.bin_size + 0.5).floor() as i64;
            *bins.entry((i, j)).or_insert(0) += 1;
        }
        Ok(Self {
            bin_size: cfg.bin_size,
            center,
            bins,
        })
    }

    /// `x_bin,y_bin,count` for every occupied bin.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x_bin", "y_bin", "count"])?;
        for ((i, j), c) in &self.bins {
            w.write_record([i.to_string(), j.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Principal axes of the x-y scatter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarSpread {
    /// Direction of maximum variance, radians from world +x, in (-π/2, π/2].
    pub major_angle: f64,
    pub major_variance: f64,
    pub minor_variance: f64,
}

impl PlanarSpread {
    pub fn total_variance(&self) -> f64 {
        self.major_variance + self.minor_variance
    }
}

pub fn planar_spread(points: &[Vec3]) -> PlanarSpread {
    let n = points.len().max(1) as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(x, y), p| (x + p.x / n, y + p.y / n));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx / n;
        syy += dy * dy / n;
        sxy += dx * dy / n;
    }
    let mean = 0.5 * (sxx + syy);
    let r = (0.25 * (sxx - syy).powi(2) + sxy * sxy).sqrt();
    PlanarSpread {
        major_angle: 0.5 * (2.0 * sxy).atan2(sxx - syy),
        major_variance: mean + r,
        minor_variance: (mean - r).max(0.0),
    }
}
