//! Timestamped pose stream with bounded retention.

use std::collections::VecDeque;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::geometry::Pose;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSample {
    pub time: f64,
    pub pose: Pose,
}

/// Append-only ring of pose samples ordered by time. Samples older than
/// `retention` seconds behind the newest one are dropped.
#[derive(Debug, Clone, Default)]
pub struct PoseHistory {
    samples: VecDeque<PoseSample>,
    retention: f64,
}

impl PoseHistory {
    pub fn new(retention: f64) -> Self {
        Self {
            samples: VecDeque::new(),
            retention,
        }
    }

    pub fn unbounded() -> Self {
        Self::new(f64::INFINITY)
    }

    pub fn from_samples(samples: impl IntoIterator<Item = PoseSample>) -> Self {
        let mut h = Self::unbounded();
        for s in samples {
            h.push(s.time, s.pose);
        }
        h
    }

    /// Appends a sample. Samples must arrive in non-decreasing time order;
    /// out-of-order samples are ignored.
    pub fn push(&mut self, time: f64, pose: Pose) {
        if let Some(last) = self.samples.back() {
            if time < last.time {
                return;
            }
        }
        self.samples.push_back(PoseSample { time, pose });
        while let Some(front) = self.samples.front() {
            if time - front.time > self.retention {
                self.samples.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first(&self) -> Option<&PoseSample> {
        self.samples.front()
    }

    pub fn latest(&self) -> Option<&PoseSample> {
        self.samples.back()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PoseSample> {
        self.samples.iter()
    }

    /// Sample closest in time to `t` (earlier sample wins exact ties).
    pub fn nearest(&self, t: f64) -> Option<&PoseSample> {
        if self.samples.is_empty() {
            return None;
        }
        let idx = self.samples.partition_point(|s| s.time < t);
        let after = self.samples.get(idx);
        let before = idx.checked_sub(1).and_then(|i| self.samples.get(i));
        match (before, after) {
            (Some(b), Some(a)) => {
                if (a.time - t) < (t - b.time) {
                    Some(a)
                } else {
                    Some(b)
                }
            }
            (Some(b), None) => Some(b),
            (None, a) => a,
        }
    }

    /// Nearest sample, provided it lies within `tolerance` seconds of `t`.
    pub fn nearest_within(&self, t: f64, tolerance: f64) -> Result<&PoseSample> {
        let s = self
            .nearest(t)
            .ok_or_else(|| Error::InsufficientHistory("history is empty".into()))?;
        if (s.time - t).abs() > tolerance {
            return Err(Error::InsufficientHistory(format!(
                "no sample within {tolerance} s of t={t} (nearest at {})",
                s.time
            )));
        }
        Ok(s)
    }

    /// Latest sample with `time <= t`.
    pub fn at_or_before(&self, t: f64) -> Option<&PoseSample> {
        let idx = self.samples.partition_point(|s| s.time <= t);
        idx.checked_sub(1).and_then(|i| self.samples.get(i))
    }

    /// Writes `time,tx,ty,tz,qw,qx,qy,qz` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "tx", "ty", "tz", "qw", "qx", "qy", "qz"])?;
        for s in &self.samples {
            let mut rec = vec![s.time.to_string()];
            rec.extend(s.pose.to_row().iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a pose log written by [`PoseHistory::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let expected = ["time", "tx", "ty", "tz", "qw", "qx", "qy", "qz"];
        if headers.len() != expected.len() || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
            return Err(Error::Schema(format!(
                "expected header {:?}, got {:?}",
                expected,
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut h = Self::unbounded();
        let mut last = f64::NEG_INFINITY;
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Schema(format!("row {}: {e}", line + 1)))?;
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("row {}: non-finite value", line + 1)));
            }
            if vals[0] < last {
                return Err(Error::Schema(format!("row {}: time goes backwards", line + 1)));
            }
            last = vals[0];
            let row: [f64; 7] = vals[1..8].try_into().unwrap();
            h.push(vals[0], Pose::from_row(&row));
        }
        if h.is_empty() {
            return Err(Error::Schema("pose log has no samples".into()));
        }
        Ok(h)
    }
}
