//! Commands behind the `basestab` binary. Every command writes its CSV
//! artifacts plus a `manifest.json` into an output directory; `replay`
//! re-executes a manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::history::PoseHistory;
use crate::latency::{linear_search, LatencyEstimate, LatencySearchConfig};
use crate::predictor::{
    checkpoint, train, train::windows_from_history, HeadMode, PredictorModel, TrainConfig, TrainReport,
};
use crate::sim::runner::load_learned;
use crate::sim::{
    planar_spread, run_scenario, write_trace_csv, Heatmap, HeatmapConfig, MotionProfile,
    PlanarSpread, Platform, Profile, Scenario, ScenarioReport, ScenarioRig, Task, Variant,
};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Predictor training from a pose log or a generated motion profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub profile: Profile,
    /// Pose CSV (`time,tx,ty,tz,qw,qx,qy,qz`); generated from `motion` if unset.
    pub data: Option<String>,
    pub motion: MotionProfile,
    /// Seconds of generated data.
    pub data_seconds: f64,
    /// Frames between consecutive training windows.
    pub stride: usize,
    pub hidden: Option<usize>,
    pub head: HeadMode,
    /// Seed of the parameter initialization.
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            profile: Profile::Paper,
            data: None,
            motion: MotionProfile::default(),
            data_seconds: 300.0,
            stride: 4,
            hidden: None,
            head: HeadMode::default(),
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct CalibrateSpec {
    pub scenario: Scenario,
    pub search: LatencySearchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct HeatmapSpec {
    pub scenario: Scenario,
    pub heatmap: HeatmapConfig,
}

/// Latency used by the `full` ablation variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FullLatency {
    /// Calibrated once on the template by the warm-up search.
    #[default]
    Estimate,
    /// The simulator's exact latency.
    Exact,
    Fixed { seconds: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSpec {
    pub variants: Vec<Variant>,
    pub trials_per_variant: usize,
    pub seed_base: u64,
    pub scenario: Scenario,
    /// Per-trial uniform jitter of the reach target on each axis, meters.
    pub target_jitter: f64,
    /// Draw a fresh sinusoid phase per trial.
    pub randomize_phase: bool,
    pub full_latency: FullLatency,
    pub search: LatencySearchConfig,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            trials_per_variant: 15,
            seed_base: 0,
            scenario: Scenario::reach(),
            target_jitter: 0.05,
            randomize_phase: true,
            full_latency: FullLatency::Estimate,
            search: LatencySearchConfig::default(),
        }
    }
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::Config("ablation needs at least one variant".into()));
        }
        if self.trials_per_variant == 0 {
            return Err(Error::Config("trials_per_variant must be >= 1".into()));
        }
        if !(self.target_jitter >= 0.0) {
            return Err(Error::Config("target_jitter must be >= 0".into()));
        }
        self.scenario.validate()
    }

    /// Seed of one (variant, trial) cell; disjoint across all cells.
    pub fn trial_seed(&self, variant: Variant, trial: usize) -> u64 {
        let v = Variant::ALL.iter().position(|x| *x == variant).unwrap() as u64;
        self.seed_base
            .wrapping_add(v * self.trials_per_variant as u64)
            .wrapping_add(trial as u64)
    }

    /// The template with seed, phase, profile seed and target drawn for one
    /// trial.
    pub fn trial_scenario(&self, variant: Variant, seed: u64) -> Scenario {
        let mut sc = self.scenario.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sc.seed = seed;
        sc.variant = variant;
        sc.motion = sc.motion.reseeded(seed);
        if let (true, MotionProfile::Sinusoid { phase, .. }) = (self.randomize_phase, &mut sc.motion)
        {
            *phase = rng.random_range(0.0..std::f64::consts::TAU);
        }
        if let Task::Reach { target, .. } = &mut sc.task {
            if self.target_jitter > 0.0 {
                for v in target.iter_mut() {
                    *v += rng.random_range(-self.target_jitter..=self.target_jitter);
                }
            }
        }
        sc
    }
}

/// A fully resolved command, as recorded in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Job {
    Train(TrainSpec),
    Calibrate(CalibrateSpec),
    Run { scenario: Scenario },
    Ablation(AblationSpec),
    Heatmap(HeatmapSpec),
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Train(_) => "train",
            Job::Calibrate(_) => "calibrate",
            Job::Run { .. } => "run",
            Job::Ablation(_) => "ablation",
            Job::Heatmap(_) => "heatmap",
        }
    }

    fn seeds(&self) -> Vec<u64> {
        match self {
            Job::Train(s) => vec![s.seed, s.train.seed],
            Job::Calibrate(s) => vec![s.scenario.seed],
            Job::Run { scenario } => vec![scenario.seed],
            Job::Heatmap(s) => vec![s.scenario.seed],
            Job::Ablation(s) => s
                .variants
                .iter()
                .flat_map(|v| (0..s.trials_per_variant).map(move |k| s.trial_seed(*v, k)))
                .collect(),
        }
    }

    /// sha256 of the job's canonical JSON.
    pub fn config_hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Artifact file names relative to the manifest's directory.
    pub artifacts: Vec<String>,
    pub job: Job,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: RunManifest = serde_json::from_reader(File::open(path)?)
            .map_err(|e| Error::Schema(format!("manifest {}: {e}", path.display())))?;
        let hash = m.job.config_hash()?;
        if hash != m.config_hash {
            return Err(Error::Schema(format!(
                "manifest hash {} does not match its job ({hash})",
                m.config_hash
            )));
        }
        Ok(m)
    }
}

/// What a command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct JobOutput {
    pub artifacts: Vec<PathBuf>,
    /// Human-readable lines for the terminal.
    pub summary: Vec<String>,
    pub manifest: PathBuf,
}

fn create<P: AsRef<Path>>(path: P) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Model for a scenario's `learned` predictor choice, if any.
fn scenario_model(sc: &Scenario) -> Result<Option<PredictorModel>> {
    load_learned(&sc.stabilizer.predictor)
}

// ---- train ----

pub struct TrainOutcome {
    pub model: PredictorModel,
    pub report: TrainReport,
    pub windows: usize,
}

/// Generates or loads the pose log, trains and returns the model.
pub fn train_predictor(spec: &TrainSpec) -> Result<TrainOutcome> {
    spec.train.validate()?;
    let mut cfg = spec.profile.predictor_config();
    cfg.head = spec.head;
    if let Some(h) = spec.hidden {
        cfg.hidden = h;
    }
    cfg.validate()?;
    let history = match &spec.data {
        Some(path) => PoseHistory::read_csv(File::open(path)?)?,
        None => {
            if !(spec.data_seconds >= 0.0) {
                return Err(Error::Config("data_seconds must be >= 0".into()));
            }
            let platform = Platform::new(&spec.motion, spec.data_seconds)?;
            let n = (spec.data_seconds * cfg.frequency).floor() as usize;
            let mut h = PoseHistory::unbounded();
            for k in 0..n {
                let t = k as f64 / cfg.frequency;
                h.push(t, platform.pose(t));
            }
            h
        }
    };
    let needed = cfg.input_frames + cfg.output_frames + 1;
    if history.len() < needed {
        return Err(Error::Schema(format!(
            "pose log has {} samples, a window needs {needed}",
            history.len()
        )));
    }
    let windows = windows_from_history(
        &history,
        cfg.input_frames,
        cfg.output_frames,
        cfg.frequency,
        spec.stride,
    )?;
    let mut model = PredictorModel::random(cfg, spec.seed)?;
    let report = train(&mut model, &windows, &spec.train)?;
    Ok(TrainOutcome {
        model,
        report,
        windows: windows.len(),
    })
}

pub fn cmd_train(spec: &TrainSpec, out: &Path) -> Result<(Vec<PathBuf>, Vec<String>)> {
    let outcome = train_predictor(spec)?;
    let ck = out.join("predictor.json");
    let mut w = create(&ck)?;
    checkpoint::save(&outcome.model, &mut w)?;
    w.flush()?;
    let loss = out.join("loss.csv");
    outcome.report.write_csv(create(&loss)?)?;
    let summary = vec![
        format!("windows: {}", outcome.windows),
        format!("initial loss: {}", outcome.report.initial_loss),
        format!(
            "final loss: {} (epoch {})",
            outcome.report.final_loss, outcome.report.best_epoch
        ),
        format!("checkpoint: {}", ck.display()),
    ];
    Ok((vec![ck, loss], summary))
}

// ---- calibrate ----

pub fn calibrate(spec: &CalibrateSpec, model: Option<&PredictorModel>) -> Result<LatencyEstimate> {
    spec.search.validate()?;
    spec.scenario.validate()?;
    let rig = ScenarioRig::new(spec.scenario.clone(), model);
    linear_search(&rig, &spec.search)
}

pub fn cmd_calibrate(spec: &CalibrateSpec, out: &Path) -> Result<(Vec<PathBuf>, Vec<String>)> {
    let model = scenario_model(&spec.scenario)?;
    let est = calibrate(spec, model.as_ref())?;
    let curve = out.join("latency_curve.csv");
    est.write_curve_csv(create(&curve)?)?;
    let summary = vec![
        format!("estimated latency: {} s", est.delta_t),
        format!("simulated latency: {} s", spec.scenario.exact_latency()),
    ];
    Ok((vec![curve], summary))
}

// ---- run ----

pub fn cmd_run(scenario: &Scenario, out: &Path) -> Result<(ScenarioReport, Vec<PathBuf>, Vec<String>)> {
    let model = scenario_model(scenario)?;
    let mut report = run_scenario(scenario, model.as_ref())?;
    let trace = out.join("trace.csv");
    write_trace_csv(&report.trace, create(&trace)?)?;
    // relative, so reports from replays in other directories compare equal
    report.trace_path = Some(PathBuf::from("trace.csv"));
    let rep = out.join("report.json");
    write_json(&rep, &report)?;
    let summary = vec![
        format!("variant: {}", scenario.variant),
        format!("success: {}", report.success),
        format!("end-hold stddev: {} m", report.end_hold_stddev),
        format!("final distance: {} m", report.final_distance),
    ];
    Ok((report, vec![trace, rep], summary))
}

// ---- ablation ----

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub variant: Variant,
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub end_hold_stddev: f64,
    pub final_distance: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean over trials that completed.
    pub end_hold_stddev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub full_latency: f64,
    pub trials: Vec<TrialResult>,
    pub summary: Vec<VariantSummary>,
}

impl AblationResult {
    pub fn rate(&self, v: Variant) -> Option<f64> {
        self.summary.iter().find(|s| s.variant == v).map(|s| s.success_rate)
    }

    /// baseline ≤ manager ≤ full over the variants present.
    pub fn is_monotone(&self) -> bool {
        let chain: Vec<f64> = [Variant::Baseline, Variant::Manager, Variant::Full]
            .iter()
            .filter_map(|v| self.rate(*v))
            .collect();
        chain.windows(2).all(|w| w[0] <= w[1])
    }
}

pub fn ablation(spec: &AblationSpec, model: Option<&PredictorModel>) -> Result<AblationResult> {
    spec.validate()?;
    let full_latency = match spec.full_latency {
        FullLatency::Exact => spec.scenario.exact_latency(),
        FullLatency::Fixed { seconds } => seconds,
        FullLatency::Estimate => {
            let mut sc = spec.scenario.clone();
            sc.seed = spec.seed_base;
            calibrate(
                &CalibrateSpec {
                    scenario: sc,
                    search: spec.search,
                },
                model,
            )?
            .delta_t
        }
    };
    let cells: Vec<(Variant, usize)> = spec
        .variants
        .iter()
        .flat_map(|v| (0..spec.trials_per_variant).map(move |k| (*v, k)))
        .collect();
    let trials: Vec<TrialResult> = cells
        .par_iter()
        .map(|&(variant, trial)| {
            let seed = spec.trial_seed(variant, trial);
            let mut sc = spec.trial_scenario(variant, seed);
            sc.stabilizer.latency = Some(full_latency);
            match run_scenario(&sc, model) {
                Ok(r) => TrialResult {
                    variant,
                    trial,
                    seed,
                    success: r.success,
                    end_hold_stddev: r.end_hold_stddev,
                    final_distance: r.final_distance,
                    error: None,
                },
                Err(e) => TrialResult {
                    variant,
                    trial,
                    seed,
                    success: false,
                    end_hold_stddev: f64::NAN,
                    final_distance: f64::NAN,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let summary = spec
        .variants
        .iter()
        .map(|v| {
            let rows: Vec<&TrialResult> = trials.iter().filter(|t| t.variant == *v).collect();
            let successes = rows.iter().filter(|t| t.success).count();
            let ok: Vec<f64> = rows
                .iter()
                .filter(|t| t.error.is_none())
                .map(|t| t.end_hold_stddev)
                .collect();
            VariantSummary {
                variant: *v,
                trials: rows.len(),
                successes,
                success_rate: successes as f64 / rows.len() as f64,
                end_hold_stddev: if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().sum::<f64>() / ok.len() as f64
                },
            }
        })
        .collect();
    Ok(AblationResult {
        full_latency,
        trials,
        summary,
    })
}

pub fn cmd_ablation(spec: &AblationSpec, out: &Path) -> Result<(AblationResult, Vec<PathBuf>, Vec<String>)> {
    let model = scenario_model(&spec.scenario)?;
    let result = ablation(spec, model.as_ref())?;
    let table = out.join("ablation.csv");
    let mut w = csv::Writer::from_writer(create(&table)?);
    w.write_record(["variant", "success_rate", "end_hold_stddev", "successes", "trials"])?;
    for s in &result.summary {
        w.write_record([
            s.variant.name().to_string(),
            s.success_rate.to_string(),
            s.end_hold_stddev.to_string(),
            s.successes.to_string(),
            s.trials.to_string(),
        ])?;
    }
    w.flush()?;
    let per_trial = out.join("ablation_trials.csv");
    let mut w = csv::Writer::from_writer(create(&per_trial)?);
    w.write_record(["variant", "trial", "seed", "success", "end_hold_stddev", "final_distance", "error"])?;
    for t in &result.trials {
        w.write_record([
            t.variant.name().to_string(),
            t.trial.to_string(),
            t.seed.to_string(),
            t.success.to_string(),
            t.end_hold_stddev.to_string(),
            t.final_distance.to_string(),
            t.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    let mut summary = vec![format!("full-variant latency: {} s", result.full_latency)];
    summary.extend(result.summary.iter().map(|s| {
        format!(
            "{:<16} success {}/{} ({:.3})  stddev {:.6} m",
            s.variant.name(),
            s.successes,
            s.trials,
            s.success_rate,
            s.end_hold_stddev
        )
    }));
    summary.push(format!(
        "ordering baseline <= manager <= full: {}",
        if result.is_monotone() { "holds" } else { "violated" }
    ));
    Ok((result, vec![table, per_trial], summary))
}

// ---- heatmap ----

pub fn heatmap(spec: &HeatmapSpec, model: Option<&PredictorModel>) -> Result<(Heatmap, PlanarSpread, ScenarioReport)> {
    let sc = &spec.scenario;
    if !sc.task.is_end_hold() {
        return Err(Error::Config("heatmap needs an end_hold task".into()));
    }
    sc.validate()?;
    let report = run_scenario(sc, model)?;
    let points = report.settled_markers(sc.settle_time);
    let target = sc.task.world_target();
    let map = Heatmap::build(&points, [target.x, target.y], &spec.heatmap)?;
    let spread = planar_spread(&points);
    Ok((map, spread, report))
}

pub fn cmd_heatmap(spec: &HeatmapSpec, out: &Path) -> Result<(Vec<PathBuf>, Vec<String>)> {
    let model = scenario_model(&spec.scenario)?;
    let (map, spread, _) = heatmap(spec, model.as_ref())?;
    let path = out.join(format!("heatmap_{}.csv", spec.scenario.variant.name()));
    map.write_csv(create(&path)?)?;
    let summary = vec![
        format!("variant: {}", spec.scenario.variant),
        format!("occupied bins: {}", map.bins.len()),
        format!("total variance: {} m^2", spread.total_variance()),
        format!("major axis: {:.2} deg", spread.major_angle.to_degrees()),
    ];
    Ok((vec![path], summary))
}

// ---- dispatch ----

/// Runs a job into `out` and records its manifest there.
pub fn execute(job: &Job, out: &Path) -> Result<JobOutput> {
    fs::create_dir_all(out)?;
    let (artifacts, summary) = match job {
        Job::Train(s) => cmd_train(s, out)?,
        Job::Calibrate(s) => cmd_calibrate(s, out)?,
        Job::Run { scenario } => {
            let (_, a, s) = cmd_run(scenario, out)?;
            (a, s)
        }
        Job::Ablation(s) => {
            let (_, a, s) = cmd_ablation(s, out)?;
            (a, s)
        }
        Job::Heatmap(s) => cmd_heatmap(s, out)?,
    };
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: job.config_hash()?,
        seeds: job.seeds(),
        artifacts: artifacts
            .iter()
            .map(|p| {
                p.strip_prefix(out)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .into_owned()
            })
            .collect(),
        job: job.clone(),
    };
    let path = out.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(JobOutput {
        artifacts,
        summary,
        manifest: path,
    })
}

/// Re-executes the job recorded in a manifest into `out`.
pub fn replay(manifest: &Path, out: &Path) -> Result<JobOutput> {
    let m = RunManifest::load(manifest)?;
    execute(&m.job, out)
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub profile: Option<Profile>,
    pub variant: Option<Variant>,
    pub trials: Option<usize>,
    pub checkpoint: Option<String>,
}

impl Overrides {
    fn scenario(&self, sc: &mut Scenario) {
        if let Some(p) = self.profile {
            p.apply(sc);
        }
        if let Some(s) = self.seed {
            sc.seed = s;
        }
        if let Some(v) = self.variant {
            sc.variant = v;
        }
        if let Some(c) = &self.checkpoint {
            sc.stabilizer.predictor = crate::sim::PredictorChoice::Learned { checkpoint: c.clone() };
        }
    }
}

fn parse_toml<T: serde::de::DeserializeOwned + Default>(text: Option<&str>) -> Result<T> {
    match text {
        Some(t) => toml::from_str(t).map_err(|e| Error::Config(e.to_string())),
        None => Ok(T::default()),
    }
}

/// Builds a job from a command name, optional TOML config text and
/// overrides.
pub fn build_job(command: &str, config: Option<&str>, o: &Overrides) -> Result<Job> {
    let job = match command {
        "train" => {
            let mut s: TrainSpec = parse_toml(config)?;
            if let Some(p) = o.profile {
                s.profile = p;
            }
            if let Some(seed) = o.seed {
                s.seed = seed;
                s.train.seed = seed;
            }
            Job::Train(s)
        }
        "calibrate" => {
            let mut s: CalibrateSpec = parse_toml(config)?;
            o.scenario(&mut s.scenario);
            s.scenario.validate()?;
            s.search.validate()?;
            Job::Calibrate(s)
        }
        "run" => {
            let mut scenario: Scenario = parse_toml(config)?;
            o.scenario(&mut scenario);
            scenario.validate()?;
            Job::Run { scenario }
        }
        "ablation" => {
            let mut s: AblationSpec = parse_toml(config)?;
            let variant = o.variant;
            o.scenario(&mut s.scenario);
            if let Some(v) = variant {
                s.variants = vec![v];
            }
            if let Some(seed) = o.seed {
                s.seed_base = seed;
            }
            if let Some(t) = o.trials {
                s.trials_per_variant = t;
            }
            s.validate()?;
            Job::Ablation(s)
        }
        "heatmap" => {
            let mut s: HeatmapSpec = parse_toml(config)?;
            o.scenario(&mut s.scenario);
            s.scenario.validate()?;
            Job::Heatmap(s)
        }
        other => return Err(Error::Config(format!("unknown command {other:?}"))),
    };
    Ok(job)
}
