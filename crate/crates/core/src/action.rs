//! Action buffer with similarity alignment, temporal ensembling and
//! interpolation of asynchronously arriving action chunks.
//!
//! Steps are addressed by absolute index on a grid anchored at the buffer's
//! epoch (the observation time of the first chunk). `time(step) = epoch +
//! step * step_period`. Each entry also records how its value was assembled
//! from chunk contributions, so downstream consumers can re-express every
//! contribution in the frame it was generated in.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

const STEP_EPS: f64 = 1e-9;
const COST_TIE_EPS: f64 = 1e-12;

/// End-effector position target in the arm base frame plus an optional
/// gripper channel in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub position: Vec3,
    pub gripper: f64,
}

impl Action {
    pub fn new(position: Vec3) -> Self {
        Self {
            position,
            gripper: 0.0,
        }
    }

    pub fn at(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vec3::new(x, y, z))
    }

    pub fn with_gripper(mut self, gripper: f64) -> Self {
        self.gripper = gripper;
        self
    }

    pub fn is_valid(&self) -> bool {
        self.position.iter().all(|v| v.is_finite()) && (0.0..=1.0).contains(&self.gripper)
    }

    fn lerp(&self, other: &Action, lambda: f64) -> Action {
        Action {
            position: self.position * (1.0 - lambda) + other.position * lambda,
            gripper: self.gripper * (1.0 - lambda) + other.gripper * lambda,
        }
    }
}

/// One policy inference: actions for the `actions.len()` policy steps that
/// follow `obs_time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    pub obs_time: f64,
    pub inference_duration: f64,
    pub step_period: f64,
    pub actions: Vec<Action>,
}

impl ActionChunk {
    pub fn new(
        obs_time: f64,
        inference_duration: f64,
        step_period: f64,
        actions: Vec<Action>,
    ) -> Result<Self> {
        let chunk = Self {
            obs_time,
            inference_duration,
            step_period,
            actions,
        };
        chunk.validate()?;
        Ok(chunk)
    }

    pub fn validate(&self) -> Result<()> {
        if self.actions.is_empty() {
            return Err(Error::InvalidChunk("chunk has no actions".into()));
        }
        if !(self.step_period > 0.0) {
            return Err(Error::InvalidChunk(format!(
                "step period must be positive, got {}",
                self.step_period
            )));
        }
        if !(self.inference_duration >= 0.0) {
            return Err(Error::InvalidChunk(format!(
                "inference duration must be non-negative, got {}",
                self.inference_duration
            )));
        }
        if let Some(bad) = self.actions.iter().position(|a| !a.is_valid()) {
            return Err(Error::InvalidChunk(format!("action {bad} is not finite or has gripper outside [0, 1]")));
        }
        Ok(())
    }

    /// Time at which the chunk becomes available to the manager.
    pub fn available_at(&self) -> f64 {
        self.obs_time + self.inference_duration
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// How the overlapping part of a chunk is folded into the buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MergeRule {
    /// Weighted running average `(W*A + w*u) / (W + w)`.
    #[default]
    Normalized,
    /// `W*A + w*u` without renormalization. Kept for comparison only; it
    /// shrinks action magnitudes.
    Literal,
}

/// Which buffered entries take part in the alignment overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    #[default]
    IncludeExecuted,
    PendingOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub alpha: f64,
    pub search_half_width: usize,
    pub merge_rule: MergeRule,
    pub overlap: OverlapMode,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            search_half_width: 3,
            merge_rule: MergeRule::Normalized,
            overlap: OverlapMode::IncludeExecuted,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Ensemble weight of the `i`-th action of a chunk (1-based).
    pub fn weight(&self, i: usize) -> f64 {
        (-self.alpha * i as f64).exp()
    }
}

/// The share of an entry's value contributed by one chunk action.
///
/// Invariant: `entry.action == Σ coefficient * action` over the entry's
/// contributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    /// Observation time of the chunk the action came from.
    pub generated_at: f64,
    pub coefficient: f64,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub action: Action,
    pub weight: f64,
    pub contributions: Vec<Contribution>,
}

impl BufferEntry {
    fn fresh(action: Action, weight: f64, generated_at: f64) -> Self {
        Self {
            action,
            weight,
            contributions: vec![Contribution {
                generated_at,
                coefficient: 1.0,
                action,
            }],
        }
    }

    fn fold(&mut self, incoming: Action, weight: f64, generated_at: f64, rule: MergeRule) {
        let old = self.weight;
        let (keep, take) = match rule {
            MergeRule::Normalized => {
                let total = old + weight;
                if total > 0.0 {
                    (old / total, weight / total)
                } else {
                    (0.0, 1.0)
                }
            }
            MergeRule::Literal => (old, weight),
        };
        self.action = Action {
            position: self.action.position * keep + incoming.position * take,
            gripper: (self.action.gripper * keep + incoming.gripper * take).clamp(0.0, 1.0),
        };
        for c in &mut self.contributions {
            c.coefficient *= keep;
        }
        self.contributions.retain(|c| c.coefficient != 0.0);
        self.contributions.push(Contribution {
            generated_at,
            coefficient: take,
            action: incoming,
        });
        self.weight = old + weight;
    }
}

/// Time-indexed actions with accumulated ensemble weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBuffer {
    step_period: f64,
    epoch: Option<f64>,
    base_step: i64,
    entries: VecDeque<BufferEntry>,
    cursor: i64,
    retain_behind: usize,
    max_chunk_len: usize,
    last_now: f64,
}

impl ActionBuffer {
    /// Empty buffer. `search_half_width` sizes the executed history kept for
    /// alignment.
    pub fn new(step_period: f64, search_half_width: usize) -> Self {
        Self {
            step_period,
            epoch: None,
            base_step: 0,
            entries: VecDeque::new(),
            cursor: 0,
            retain_behind: search_half_width.max(1),
            max_chunk_len: 0,
            last_now: f64::NEG_INFINITY,
        }
    }

    /// Buffer holding `entries` (value, weight) starting at absolute step
    /// `base_step`, with the cursor at `base_step`.
    pub fn from_entries(
        epoch: f64,
        step_period: f64,
        search_half_width: usize,
        base_step: i64,
        entries: impl IntoIterator<Item = (Action, f64)>,
    ) -> Self {
        let mut buf = Self::new(step_period, search_half_width);
        buf.epoch = Some(epoch);
        buf.base_step = base_step;
        buf.cursor = base_step;
        buf.entries = entries
            .into_iter()
            .map(|(action, weight)| {
                let contributions = if weight > 0.0 {
                    vec![Contribution {
                        generated_at: epoch,
                        coefficient: 1.0,
                        action,
                    }]
                } else {
                    Vec::new()
                };
                BufferEntry {
                    action,
                    weight,
                    contributions,
                }
            })
            .collect();
        buf
    }

    pub fn step_period(&self) -> f64 {
        self.step_period
    }

    pub fn epoch(&self) -> Option<f64> {
        self.epoch
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Absolute index of the oldest retained entry.
    pub fn first_step(&self) -> i64 {
        self.base_step
    }

    /// One past the absolute index of the newest entry.
    pub fn end_step(&self) -> i64 {
        self.base_step + self.entries.len() as i64
    }

    /// Absolute index of the next step to execute.
    pub fn exec_cursor(&self) -> i64 {
        self.cursor
    }

    pub fn origin_time(&self) -> Option<f64> {
        self.epoch.map(|e| e + self.base_step as f64 * self.step_period)
    }

    pub fn step_time(&self, step: i64) -> Option<f64> {
        self.epoch.map(|e| e + step as f64 * self.step_period)
    }

    pub fn entry(&self, step: i64) -> Option<&BufferEntry> {
        if step < self.base_step {
            return None;
        }
        self.entries.get((step - self.base_step) as usize)
    }

    pub fn entries(&self) -> impl Iterator<Item = (i64, &BufferEntry)> {
        self.entries
            .iter()
            .enumerate()
            .map(move |(i, e)| (self.base_step + i as i64, e))
    }

    /// First grid step at or after `t`.
    pub fn step_at_or_after(&self, t: f64) -> Option<i64> {
        self.epoch
            .map(|e| ((t - e) / self.step_period - STEP_EPS).ceil() as i64)
    }

    /// Grid step of the first action of `chunk` (the step after its
    /// observation, rounded to the nearest grid point).
    pub fn chunk_first_step(&self, chunk: &ActionChunk) -> Option<i64> {
        self.epoch
            .map(|e| ((chunk.obs_time - e) / self.step_period).round() as i64 + 1)
    }

    fn ensure_epoch(&mut self, chunk: &ActionChunk) {
        if self.epoch.is_none() {
            self.epoch = Some(chunk.obs_time);
        }
    }

    /// Writes `step_index,time,x,y,z,gripper,weight` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step_index", "time", "x", "y", "z", "gripper", "weight"])?;
        for (step, e) in self.entries() {
            let t = self.step_time(step).unwrap_or(f64::NAN);
            w.write_record([
                step.to_string(),
                t.to_string(),
                e.action.position.x.to_string(),
                e.action.position.y.to_string(),
                e.action.position.z.to_string(),
                e.action.gripper.to_string(),
                e.weight.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Picks the chunk offset whose actions best match the buffer around `t2`.
///
/// Returns the `t` in `[t2 - m_s, t2 + m_s]` minimizing the mean distance
/// between `u[t + k]` and `A[t2 + k]` over their common range. Ties go to
/// the candidate closest to `t2`, then to the earlier one.
pub fn align_chunk(
    buf: &ActionBuffer,
    chunk: &ActionChunk,
    t2: i64,
    cfg: &EnsembleConfig,
) -> Result<i64> {
    let first = buf.chunk_first_step(chunk).ok_or(Error::EmptyOverlap)?;
    let chunk_end = first + chunk.len() as i64;
    let lo = match cfg.overlap {
        OverlapMode::IncludeExecuted => buf.first_step(),
        OverlapMode::PendingOnly => buf.exec_cursor().max(buf.first_step()),
    };
    let hi = buf.end_step();
    let m_s = cfg.search_half_width as i64;

    let mut best: Option<(i64, f64)> = None;
    for t in candidate_order(t2, m_s) {
        // k such that first <= t + k < chunk_end and lo <= t2 + k < hi
        let k_lo = (first - t).max(lo - t2);
        let k_hi = (chunk_end - t).min(hi - t2);
        if k_lo >= k_hi {
            continue;
        }
        let total: f64 = (k_lo..k_hi)
            .map(|k| {
                let u = &chunk.actions[(t + k - first) as usize];
                let a = buf.entry(t2 + k).expect("overlap within buffer");
                (u.position - a.action.position).norm()
            })
            .sum();
        let cost = total / (k_hi - k_lo) as f64;
        match best {
            Some((_, c)) if cost >= c - COST_TIE_EPS => {}
            _ => best = Some((t, cost)),
        }
    }
    best.map(|(t, _)| t).ok_or(Error::EmptyOverlap)
}

/// `t2, t2-1, t2+1, t2-2, t2+2, ...`
fn candidate_order(t2: i64, m_s: i64) -> impl Iterator<Item = i64> {
    std::iter::once(t2).chain((1..=m_s).flat_map(move |d| [t2 - d, t2 + d]))
}

/// Folds `chunk` into the buffer with `u[t_u + k]` landing on `A[t2 + k]`
/// for `k >= 0`. Steps before the execution cursor are never touched.
pub fn ensemble_merge(
    buf: &mut ActionBuffer,
    chunk: &ActionChunk,
    t_u: i64,
    t2: i64,
    cfg: &EnsembleConfig,
) -> Result<()> {
    chunk.validate()?;
    if buf.epoch.is_some() && (chunk.step_period - buf.step_period).abs() > STEP_EPS {
        return Err(Error::StepPeriodMismatch {
            chunk: chunk.step_period,
            buffer: buf.step_period,
        });
    }
    buf.ensure_epoch(chunk);
    if buf.entries.is_empty() {
        buf.base_step = t2;
        buf.cursor = buf.cursor.max(t2);
    }
    buf.max_chunk_len = buf.max_chunk_len.max(chunk.len());

    let first = buf.chunk_first_step(chunk).expect("epoch set");
    let k_start = (first - t_u).max(0);
    let k_end = first + chunk.len() as i64 - t_u;
    for k in k_start..k_end {
        let step = t2 + k;
        if step < buf.cursor {
            continue;
        }
        let i = (t_u + k - first) as usize;
        let u = chunk.actions[i];
        let w = cfg.weight(i + 1);
        let end = buf.end_step();
        if step < end {
            let idx = (step - buf.base_step) as usize;
            buf.entries[idx].fold(u, w, chunk.obs_time, cfg.merge_rule);
        } else {
            // Hold the last value across any gap; gap entries are unmerged.
            if step > end {
                let filler = buf.entries.back().map(|e| BufferEntry {
                    weight: 0.0,
                    ..e.clone()
                });
                let filler = filler.unwrap_or(BufferEntry {
                    action: u,
                    weight: 0.0,
                    contributions: vec![Contribution {
                        generated_at: chunk.obs_time,
                        coefficient: 1.0,
                        action: u,
                    }],
                });
                for _ in end..step {
                    buf.entries.push_back(filler.clone());
                }
            }
            buf.entries.push_back(BufferEntry::fresh(u, w, chunk.obs_time));
        }
    }
    Ok(())
}

/// Neighboring entries around a query time and the blend factor between them.
#[derive(Debug, Clone, Copy)]
pub struct Bracket<'a> {
    pub step: i64,
    pub lower: &'a BufferEntry,
    pub upper: Option<&'a BufferEntry>,
    /// Weight of `upper`; 0 means the query sits exactly on `lower`.
    pub lambda: f64,
}

impl Bracket<'_> {
    pub fn action(&self) -> Action {
        match self.upper {
            Some(upper) if self.lambda > 0.0 => self.lower.action.lerp(&upper.action, self.lambda),
            _ => self.lower.action,
        }
    }
}

pub fn bracket(buf: &ActionBuffer, tau: f64) -> Result<Bracket<'_>> {
    let (start, end) = match (buf.origin_time(), buf.is_empty()) {
        (Some(o), false) => (o, buf.step_time(buf.end_step() - 1).unwrap()),
        _ => {
            return Err(Error::OutOfRange {
                tau,
                start: f64::NAN,
                end: f64::NAN,
            })
        }
    };
    let slack = STEP_EPS * buf.step_period;
    if tau < start - slack || tau > end + slack {
        return Err(Error::OutOfRange { tau, start, end });
    }
    let pos = (tau - buf.epoch.unwrap()) / buf.step_period;
    let mut step = (pos + STEP_EPS).floor() as i64;
    let mut lambda = (pos - step as f64).clamp(0.0, 1.0);
    if lambda < STEP_EPS {
        lambda = 0.0;
    }
    step = step.clamp(buf.first_step(), buf.end_step() - 1);
    if step == buf.end_step() - 1 {
        lambda = 0.0;
    }
    Ok(Bracket {
        step,
        lower: buf.entry(step).unwrap(),
        upper: buf.entry(step + 1),
        lambda,
    })
}

/// Linear blend of the two entries around `tau`: `(1-λ) A_t + λ A_{t+1}`.
pub fn interpolate(buf: &ActionBuffer, tau: f64) -> Result<Action> {
    bracket(buf, tau).map(|b| b.action())
}

/// Moves the cursor to the first step strictly after `now` and prunes
/// history beyond the alignment horizon.
pub fn advance(buf: &mut ActionBuffer, now: f64) {
    if now < buf.last_now {
        return;
    }
    buf.last_now = now;
    let (Some(epoch), false) = (buf.epoch, buf.entries.is_empty()) else {
        return;
    };
    let origin = epoch + buf.base_step as f64 * buf.step_period;
    if now < origin - STEP_EPS * buf.step_period {
        return;
    }
    let after = ((now - epoch) / buf.step_period + STEP_EPS).floor() as i64 + 1;
    buf.cursor = buf.cursor.max(after.min(buf.end_step()));

    let keep_from = buf.cursor - (buf.retain_behind + buf.max_chunk_len) as i64;
    while buf.base_step < keep_from && buf.entries.len() > 1 {
        buf.entries.pop_front();
        buf.base_step += 1;
    }
}

/// Result of folding one chunk into the manager's buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeOutcome {
    pub t2: i64,
    pub t_u: i64,
    /// False when no candidate overlapped and timestamp alignment was used.
    pub aligned: bool,
}

/// Buffer plus configuration: the single writer of chunk merges.
#[derive(Debug, Clone)]
pub struct ActionManager {
    pub config: EnsembleConfig,
    buffer: ActionBuffer,
}

impl ActionManager {
    pub fn new(step_period: f64, config: EnsembleConfig) -> Self {
        Self {
            buffer: ActionBuffer::new(step_period, config.search_half_width),
            config,
        }
    }

    pub fn buffer(&self) -> &ActionBuffer {
        &self.buffer
    }

    /// Aligns and merges a chunk that became available at or before `now`.
    pub fn ingest(&mut self, chunk: &ActionChunk, now: f64) -> Result<MergeOutcome> {
        chunk.validate()?;
        if (chunk.step_period - self.buffer.step_period).abs() > STEP_EPS {
            return Err(Error::StepPeriodMismatch {
                chunk: chunk.step_period,
                buffer: self.buffer.step_period,
            });
        }
        self.buffer.ensure_epoch(chunk);
        let arrival = self.buffer.step_at_or_after(now).expect("epoch set");
        let t2 = if self.buffer.is_empty() {
            arrival
        } else {
            arrival.max(self.buffer.exec_cursor())
        };
        let (t_u, aligned) = match align_chunk(&self.buffer, chunk, t2, &self.config) {
            Ok(t) => (t, true),
            Err(Error::EmptyOverlap) => (t2, false),
            Err(e) => return Err(e),
        };
        ensemble_merge(&mut self.buffer, chunk, t_u, t2, &self.config)?;
        Ok(MergeOutcome { t2, t_u, aligned })
    }

    pub fn advance(&mut self, now: f64) {
        advance(&mut self.buffer, now);
    }

    pub fn interpolate(&self, tau: f64) -> Result<Action> {
        interpolate(&self.buffer, tau)
    }
}

/// Manager behind one exclusion boundary, for a merging context and a
/// control context running separately. A read never observes a partially
/// applied merge.
#[derive(Debug, Clone)]
pub struct SharedActionManager {
    inner: Arc<Mutex<ActionManager>>,
}

impl SharedActionManager {
    pub fn new(manager: ActionManager) -> Self {
        Self {
            inner: Arc::new(Mutex::new(manager)),
        }
    }

    pub fn lock(&self) -> MutexGuard<'_, ActionManager> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn ingest(&self, chunk: &ActionChunk, now: f64) -> Result<MergeOutcome> {
        self.lock().ingest(chunk, now)
    }

    /// Runs `f` on the buffer, then advances the cursor past `now`.
    pub fn execute<R>(&self, now: f64, f: impl FnOnce(&ActionBuffer) -> R) -> R {
        let mut guard = self.lock();
        let out = f(guard.buffer());
        guard.advance(now);
        out
    }
}
