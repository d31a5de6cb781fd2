//! Deterministic closed-loop simulation on a virtual clock.

pub mod components;
pub mod heatmap;
pub mod profile;
pub mod runner;
pub mod scenario;

pub use components::{
    oracle_policy_infer, ArmModel, Observation, ObservationFrame, OraclePolicy, OraclePredictor,
    PoseSensor, Workspace,
};
pub use heatmap::{planar_spread, Heatmap, HeatmapConfig, PlanarSpread};
pub use profile::{platform_pose, MotionProfile, Platform};
pub use runner::{
    marker_stddev, run_scenario, write_trace_csv, ScenarioReport, ScenarioRig, TraceRow,
};
pub use scenario::{PredictorChoice, Profile, Scenario, StabilizerSettings, Task, Variant};

/// Slack for comparing virtual timestamps.
pub(crate) const TIME_EPS: f64 = 1e-9;
