use std::fs;
use std::path::Path;
use std::process::Command;

use basestab::cli::{build_job, execute, replay, AblationSpec, FullLatency, Job, Overrides, RunManifest, TrainSpec};
use basestab::predictor::TrainConfig;
use basestab::sim::{MotionProfile, Profile, Scenario, Variant};
use basestab::Error;
use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_basestab"))
}

fn digest(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

fn small_train() -> TrainSpec {
    TrainSpec {
        profile: Profile::Desk,
        hidden: Some(6),
        data_seconds: 8.0,
        stride: 8,
        train: TrainConfig {
            epochs: 3,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn zero_trials_is_a_validation_error() {
    let spec = AblationSpec {
        trials_per_variant: 0,
        ..Default::default()
    };
    let err = execute(&Job::Ablation(spec), tempfile::tempdir().unwrap().path()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err:?}");
    let o = Overrides {
        trials: Some(0),
        ..Default::default()
    };
    assert!(build_job("ablation", None, &o).unwrap_err().is_validation());
}

#[test]
fn single_variant_static_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = AblationSpec {
        variants: vec![Variant::Full],
        trials_per_variant: 2,
        full_latency: FullLatency::Exact,
        ..Default::default()
    };
    spec.scenario.motion = MotionProfile::Static;
    execute(&Job::Ablation(spec), dir.path()).unwrap();
    let table = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("variant,success_rate,end_hold_stddev,successes,trials"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "full");
    assert_eq!(row[1].parse::<f64>().unwrap(), 1.0);
    assert_eq!(row[4], "2");
    assert!(lines.next().is_none());
}

fn assert_replay_identical(job: Job) {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let out = execute(&job, first.path()).unwrap();
    let manifest = RunManifest::load(&out.manifest).unwrap();
    assert_eq!(manifest.job, job);
    replay(&out.manifest, second.path()).unwrap();
    assert!(!manifest.artifacts.is_empty());
    for name in &manifest.artifacts {
        assert_eq!(digest(&first.path().join(name)), digest(&second.path().join(name)), "{name}");
    }
    assert_eq!(
        fs::read(first.path().join("manifest.json")).unwrap(),
        fs::read(second.path().join("manifest.json")).unwrap()
    );
}

#[test]
fn run_and_train_replay_byte_identical() {
    let scenario = Scenario {
        duration: 3.0,
        motion: MotionProfile::filtered_shake(2),
        ..Scenario::end_hold()
    };
    assert_replay_identical(Job::Run { scenario });
    assert_replay_identical(Job::Train(small_train()));
}

#[test]
fn tampered_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = execute(&Job::Run { scenario: Scenario { duration: 0.5, ..Scenario::end_hold() } }, dir.path()).unwrap();
    let text = fs::read_to_string(&out.manifest).unwrap();
    fs::write(&out.manifest, text.replace("\"duration\": 0.5", "\"duration\": 0.6")).unwrap();
    assert!(matches!(RunManifest::load(&out.manifest), Err(Error::Schema(_))));
}

#[test]
fn empty_pose_log_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("poses.csv");
    fs::write(&log, "time,tx,ty,tz,qw,qx,qy,qz\n").unwrap();
    let spec = TrainSpec {
        data: Some(log.to_string_lossy().into_owned()),
        ..small_train()
    };
    let err = execute(&Job::Train(spec), &dir.path().join("out")).unwrap_err();
    assert!(matches!(err, Error::Schema(_)), "{err:?}");
}

#[test]
fn binary_exit_codes_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "duration = 2.0\n[motion]\nkind = \"sinusoid\"\namplitude = 0.05\nfrequency = 0.5\n").unwrap();
    let out = dir.path().join("run");
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--variant", "manager", "--seed", "3"])
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(0));
    assert!(out.join("trace.csv").exists() && out.join("report.json").exists());

    let again = dir.path().join("again");
    let status = bin()
        .args(["replay", "--manifest"])
        .arg(out.join("manifest.json"))
        .arg("--out")
        .arg(&again)
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(0));
    assert_eq!(digest(&out.join("trace.csv")), digest(&again.join("trace.csv")));

    let bad = bin()
        .args(["ablation", "--trials", "0", "--out"])
        .arg(dir.path().join("bad"))
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("error"));

    let missing = bin()
        .args(["replay", "--manifest"])
        .arg(dir.path().join("nope.json"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(2));
}

#[test]
fn training_is_deterministic_under_a_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    execute(&Job::Train(small_train()), a.path()).unwrap();
    execute(&Job::Train(small_train()), b.path()).unwrap();
    assert_eq!(digest(&a.path().join("predictor.json")), digest(&b.path().join("predictor.json")));
    let other = TrainSpec {
        seed: 1,
        ..small_train()
    };
    let c = tempfile::tempdir().unwrap();
    execute(&Job::Train(other), c.path()).unwrap();
    assert_ne!(digest(&a.path().join("predictor.json")), digest(&c.path().join("predictor.json")));
}
