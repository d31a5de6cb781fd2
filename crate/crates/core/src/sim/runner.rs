//! Virtual-time closed loop.
//!
//! Each control tick runs, in order: sensor samples that became available,
//! merges of chunks whose inference finished, the control command, the
//! lagged actuator, metric recording, and finally a new policy observation
//! when one is due.

use std::collections::VecDeque;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::components::{
    oracle_policy_infer, Actuator, Observation, ObservationFrame, OraclePredictor,
};
use super::profile::Platform;
use super::scenario::{PredictorChoice, Scenario, Task};
use super::TIME_EPS;
use crate::action::{ActionChunk, ActionManager};
use crate::error::{Error, Result};
use crate::geometry::{Extrinsics, Pose, Vec3};
use crate::history::PoseHistory;
use crate::latency::{EndHoldObservation, EndHoldRig, PinholeCamera};
use crate::predictor::features::rotation_from_vector;
use crate::predictor::{rotation_vector, ConstantVelocity, HoldPose, MotionPredictor, PredictorModel};
use crate::stabilizer::{Offset, Stabilizer};

/// One control tick of the trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    /// Command before compensation, base frame.
    pub raw: Vec3,
    pub delta: Pose,
    /// Command sent to the arm, base frame.
    pub command: Vec3,
    /// Predicted sensor pose at execution (latest sensed pose without a
    /// stabilizer).
    pub predicted: Pose,
    pub truth: Pose,
    /// Latest sensed pose.
    pub sensed: Pose,
    /// End effector in the world.
    pub ee_world: Vec3,
}

pub const TRACE_HEADER: [&str; 33] = [
    "t", "raw_x", "raw_y", "raw_z", "delta_tx", "delta_ty", "delta_tz", "delta_rx", "delta_ry",
    "delta_rz", "cmd_x", "cmd_y", "cmd_z", "pred_tx", "pred_ty", "pred_tz", "pred_qw", "pred_qx",
    "pred_qy", "pred_qz", "true_tx", "true_ty", "true_tz", "true_qw", "true_qx", "true_qy",
    "true_qz", "sensed_tx", "sensed_ty", "sensed_tz", "ee_x", "ee_y", "ee_z",
];

impl TraceRow {
    fn record(&self) -> Vec<String> {
        let rv = rotation_vector(&self.delta.rotation);
        let mut out = Vec::with_capacity(TRACE_HEADER.len());
        out.push(self.t.to_string());
        out.extend(self.raw.iter().map(|v| v.to_string()));
        out.extend(self.delta.translation.iter().map(|v| v.to_string()));
        out.extend(rv.iter().map(|v| v.to_string()));
        out.extend(self.command.iter().map(|v| v.to_string()));
        out.extend(self.predicted.to_row().iter().map(|v| v.to_string()));
        out.extend(self.truth.to_row().iter().map(|v| v.to_string()));
        out.extend(self.sensed.translation.iter().map(|v| v.to_string()));
        out.extend(self.ee_world.iter().map(|v| v.to_string()));
        out
    }
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub success: bool,
    /// RMS distance of the end effector from its mean world position after
    /// the settle time.
    pub end_hold_stddev: f64,
    /// Final end-effector distance from the task's world point.
    pub final_distance: f64,
    /// Time a reach first satisfied its hold requirement.
    pub success_time: Option<f64>,
    pub stabilizer_latency: Option<f64>,
    pub exact_latency: f64,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
    pub trace_path: Option<PathBuf>,
}

impl ScenarioReport {
    /// End-effector world positions after the settle time.
    pub fn settled_markers(&self, settle_time: f64) -> Vec<Vec3> {
        self.trace
            .iter()
            .filter(|r| r.t >= settle_time - TIME_EPS)
            .map(|r| r.ee_world)
            .collect()
    }
}

/// RMS distance of points from their centroid.
pub fn marker_stddev(points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    (points.iter().map(|p| (p - mean).norm_squared()).sum::<f64>() / n).sqrt()
}

enum PredictorBox<'a> {
    Owned(Box<dyn MotionPredictor + 'a>),
    Borrowed(&'a PredictorModel),
}

impl PredictorBox<'_> {
    fn get(&self) -> &dyn MotionPredictor {
        match self {
            Self::Owned(b) => b.as_ref(),
            Self::Borrowed(m) => *m,
        }
    }
}

/// Loads the model a `Learned` choice refers to.
pub fn load_learned(choice: &PredictorChoice) -> Result<Option<PredictorModel>> {
    match choice {
        PredictorChoice::Learned { checkpoint } => {
            let f = std::fs::File::open(checkpoint)?;
            Ok(Some(crate::predictor::checkpoint::load(std::io::BufReader::new(f))?))
        }
        _ => Ok(None),
    }
}

/// Pipeline state between ticks.
struct Loop<'a> {
    sc: &'a Scenario,
    platform: Arc<Platform>,
    extrinsics: Pose,
    history: PoseHistory,
    next_sample: i64,
    noise: Option<(ChaCha8Rng, Normal<f64>)>,
    manager: ActionManager,
    stabilizer: Option<Stabilizer>,
    predictor: PredictorBox<'a>,
    in_flight: Option<ActionChunk>,
    next_obs: f64,
    frames: VecDeque<ObservationFrame>,
    /// Baseline: the chunk being executed and when it started.
    open_loop: Option<(ActionChunk, f64)>,
    actuator: Actuator,
    initial: Vec3,
    target_world: Vec3,
}

impl<'a> Loop<'a> {
    fn new(sc: &'a Scenario, model: Option<&'a PredictorModel>) -> Result<Self> {
        sc.validate()?;
        let f = sc.sensor.frequency;
        let st = &sc.stabilizer;
        let (l0, l1) = match (&st.predictor, model) {
            (PredictorChoice::Learned { .. }, Some(m)) => {
                (m.config.input_frames, m.config.output_frames)
            }
            (PredictorChoice::Learned { .. }, None) => {
                return Err(Error::Config("learned predictor selected but no model given".into()))
            }
            _ => (st.input_frames, st.output_frames),
        };
        if let (PredictorChoice::Learned { .. }, Some(m)) = (&st.predictor, model) {
            if (m.config.frequency - f).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "model trained at {} Hz but the sensor runs at {f} Hz",
                    m.config.frequency
                )));
            }
        }
        let prehistory = (l0 + 2) as f64 / f + sc.sensor.sensor_latency;
        let horizon = sc.duration + l1 as f64 / f + 1.0;
        let platform = Arc::new(Platform::new(&sc.motion, horizon)?);
        let predictor = match (&st.predictor, model) {
            (PredictorChoice::Oracle, _) => PredictorBox::Owned(Box::new(OraclePredictor {
                platform: platform.clone(),
                input_frames: l0,
                output_frames: l1,
            })),
            (PredictorChoice::ConstantVelocity, _) => {
                PredictorBox::Owned(Box::new(ConstantVelocity {
                    input_frames: l0,
                    output_frames: l1,
                }))
            }
            (PredictorChoice::Hold, _) => PredictorBox::Owned(Box::new(HoldPose {
                input_frames: l0,
                output_frames: l1,
            })),
            (PredictorChoice::Learned { .. }, Some(m)) => PredictorBox::Borrowed(m),
            (PredictorChoice::Learned { .. }, None) => unreachable!(),
        };
        let stabilizer = sc.stabilizer_latency().map(|latency| Stabilizer {
            extrinsics: Extrinsics(sc.arm.extrinsics),
            latency,
            pose_frequency: f,
            generation: st.generation,
        });
        let extrinsics = sc.arm.extrinsics;
        let target_world = sc.task.world_target();
        let initial = match sc.task {
            Task::EndHold { .. } => {
                let base0 = platform.pose(0.0).compose(&extrinsics);
                sc.arm.workspace.clamp(&base0.inverse().transform_point(&target_world))
            }
            Task::Reach { .. } => sc.arm.workspace.clamp(&Vec3::from(sc.arm.home)),
        };
        let noise = if sc.sensor.noise_sigma > 0.0 {
            let n = Normal::new(0.0, sc.sensor.noise_sigma)
                .map_err(|e| Error::Config(e.to_string()))?;
            Some((ChaCha8Rng::seed_from_u64(sc.seed ^ 0x5e45_0a11), n))
        } else {
            None
        };
        let chunk_span = sc.policy.action_horizon as f64 / sc.policy.rate;
        let retention = l0 as f64 / f + chunk_span + sc.policy.inference_latency + 2.0;
        Ok(Self {
            sc,
            extrinsics,
            history: PoseHistory::new(retention),
            next_sample: (-prehistory * f).floor() as i64,
            noise,
            manager: ActionManager::new(sc.policy.step_period(), sc.ensemble),
            stabilizer,
            predictor,
            in_flight: None,
            next_obs: 0.0,
            frames: VecDeque::new(),
            open_loop: None,
            actuator: Actuator::new(sc.arm.actuation_lag, initial),
            initial,
            target_world,
            platform,
        })
    }

    fn base_pose(&self, t: f64) -> Pose {
        self.platform.pose(t).compose(&self.extrinsics)
    }

    fn sense(&mut self, now: f64) {
        let f = self.sc.sensor.frequency;
        loop {
            let t = self.next_sample as f64 / f;
            if t + self.sc.sensor.sensor_latency > now + TIME_EPS {
                break;
            }
            let mut pose = self.platform.pose(t);
            if let Some((rng, n)) = &mut self.noise {
                let dt = Vec3::from_fn(|_, _| n.sample(rng));
                let dr = Vec3::from_fn(|_, _| n.sample(rng));
                pose = Pose::new(pose.translation + dt, rotation_from_vector(&dr) * pose.rotation);
            }
            self.history.push(t, pose);
            self.next_sample += 1;
        }
    }

    fn merge(&mut self, now: f64) -> Result<()> {
        let ready = self
            .in_flight
            .as_ref()
            .is_some_and(|c| c.available_at() <= now + TIME_EPS);
        if !ready {
            return Ok(());
        }
        let chunk = self.in_flight.take().unwrap();
        if self.sc.variant.uses_manager() {
            self.manager.ingest(&chunk, now)?;
        } else {
            let start = chunk.available_at();
            self.open_loop = Some((chunk, start));
        }
        Ok(())
    }

    /// Returns (raw, command, offset, predicted pose).
    fn control(&mut self, now: f64) -> Result<(Vec3, Vec3, Offset, Pose)> {
        let sensed = self.history.latest().map(|s| s.pose).unwrap_or_default();
        let hold = (self.initial, self.initial, Offset::identity(), sensed);
        if !self.sc.variant.uses_manager() {
            let Some((chunk, start)) = &self.open_loop else {
                return Ok(hold);
            };
            let j = ((now - start) / chunk.step_period + TIME_EPS).floor().max(0.0) as usize;
            let p = chunk.actions[j.min(chunk.actions.len() - 1)].position;
            return Ok((p, p, Offset::identity(), sensed));
        }
        let buf = self.manager.buffer();
        let (Some(origin), false) = (buf.origin_time(), buf.is_empty()) else {
            return Ok(hold);
        };
        if now < origin - TIME_EPS {
            return Ok(hold);
        }
        let last = buf.step_time(buf.end_step() - 1).expect("non-empty buffer");
        let tau = now.min(last);
        let out = match &self.stabilizer {
            None => {
                let a = crate::action::interpolate(buf, tau)?;
                (a.position, a.position, Offset::identity(), sensed)
            }
            Some(st) => {
                let s = st.stabilized_action(buf, tau, &self.history, self.predictor.get())?;
                (s.raw.position, s.compensated.position, s.offset, s.predicted_pose)
            }
        };
        self.manager.advance(now);
        Ok(out)
    }

    fn observe(&mut self, now: f64) -> Result<()> {
        if self.in_flight.is_some() || now + TIME_EPS < self.next_obs {
            return Ok(());
        }
        if let Some((chunk, start)) = &self.open_loop {
            let end = start + chunk.actions.len() as f64 * chunk.step_period;
            if now + TIME_EPS < end {
                return Ok(());
            }
        }
        let ee = self.actuator.effective();
        let target = self.base_pose(now).inverse().transform_point(&self.target_world);
        self.frames.push_back(ObservationFrame {
            time: now,
            ee,
            target,
        });
        while self.frames.len() > self.sc.policy.obs_horizon {
            self.frames.pop_front();
        }
        let obs = Observation {
            frames: self.frames.iter().copied().collect(),
        };
        let chunk = oracle_policy_infer(&self.sc.policy, &obs, &self.sc.arm.workspace)?;
        let p = &self.sc.policy;
        self.next_obs = now + p.step_period().max(p.inference_latency);
        self.in_flight = Some(chunk);
        Ok(())
    }

    fn tick(&mut self, now: f64) -> Result<TraceRow> {
        self.sense(now);
        self.merge(now)?;
        let (raw, cmd, offset, predicted) = self.control(now)?;
        let cmd = self.sc.arm.workspace.clamp(&cmd);
        self.actuator.command(now, cmd);
        let ee_base = self.actuator.update(now);
        let ee_world = self.base_pose(now).transform_point(&ee_base);
        let row = TraceRow {
            t: now,
            raw,
            delta: offset.delta,
            command: cmd,
            predicted,
            truth: self.platform.pose(now),
            sensed: self.history.latest().map(|s| s.pose).unwrap_or_default(),
            ee_world,
        };
        self.observe(now)?;
        Ok(row)
    }
}

/// Runs a scenario to completion. `model` backs a `Learned` predictor
/// choice; it is loaded from the checkpoint path when not given.
pub fn run_scenario(sc: &Scenario, model: Option<&PredictorModel>) -> Result<ScenarioReport> {
    let loaded;
    let model = match model {
        Some(m) => Some(m),
        None => {
            loaded = load_learned(&sc.stabilizer.predictor)?;
            loaded.as_ref()
        }
    };
    let mut lp = Loop::new(sc, model)?;
    let ticks = (sc.duration * sc.control_hz + TIME_EPS).floor() as usize;
    let mut trace = Vec::with_capacity(ticks + 1);
    let mut inside_since: Option<f64> = None;
    let mut success_time = None;
    for k in 0..=ticks {
        if sc.duration <= 0.0 {
            break;
        }
        let now = k as f64 / sc.control_hz;
        let row = lp.tick(now)?;
        if let Task::Reach {
            threshold,
            hold_time,
            ..
        } = sc.task
        {
            if (row.ee_world - lp.target_world).norm() <= threshold {
                let since = *inside_since.get_or_insert(now);
                if success_time.is_none() && now - since + TIME_EPS >= hold_time {
                    success_time = Some(now);
                }
            } else {
                inside_since = None;
            }
        }
        trace.push(row);
    }
    let settled: Vec<Vec3> = trace
        .iter()
        .filter(|r| r.t >= sc.settle_time - TIME_EPS)
        .map(|r| r.ee_world)
        .collect();
    let stddev = marker_stddev(&settled);
    let final_distance = trace
        .last()
        .map(|r| (r.ee_world - lp.target_world).norm())
        .unwrap_or(0.0);
    let success = match sc.task {
        Task::EndHold { threshold, .. } => stddev <= threshold,
        Task::Reach { .. } => success_time.is_some(),
    };
    Ok(ScenarioReport {
        success,
        end_hold_stddev: stddev,
        final_distance,
        success_time,
        stabilizer_latency: sc.stabilizer_latency(),
        exact_latency: sc.exact_latency(),
        trace,
        trace_path: None,
    })
}

/// Fresh end-hold runs of a scenario template with the `full` pipeline at a
/// chosen latency, for calibration.
pub struct ScenarioRig<'a> {
    pub template: Scenario,
    pub model: Option<&'a PredictorModel>,
}

impl<'a> ScenarioRig<'a> {
    pub fn new(mut template: Scenario, model: Option<&'a PredictorModel>) -> Self {
        if !template.task.is_end_hold() {
            template.task = Task::EndHold {
                point: template.task.world_target().into(),
                threshold: 0.01,
            };
        }
        template.variant = super::Variant::Full;
        Self { template, model }
    }
}

impl EndHoldRig for ScenarioRig<'_> {
    fn camera(&self) -> PinholeCamera {
        self.template.camera()
    }

    fn run_end_hold(&self, latency: f64, dwell: f64) -> Result<EndHoldObservation> {
        let mut sc = self.template.clone();
        sc.stabilizer.latency = Some(latency);
        sc.duration = sc.settle_time + dwell;
        let report = run_scenario(&sc, self.model)?;
        let rows = report
            .trace
            .iter()
            .filter(|r| r.t >= sc.settle_time - TIME_EPS);
        let (marker, platform) = rows.map(|r| (r.ee_world, r.sensed.translation)).unzip();
        Ok(EndHoldObservation { marker, platform })
    }
}
