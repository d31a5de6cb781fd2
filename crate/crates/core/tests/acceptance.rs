//! End-to-end acceptance checks. Runs as a plain binary so the verdict
//! lines show up in `cargo test` output; exits non-zero if any check fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use basestab::action::{align_chunk, ensemble_merge, ActionBuffer};
use basestab::cli::{
    ablation, calibrate, execute, replay, AblationSpec, CalibrateSpec, FullLatency, HeatmapSpec, Job, RunManifest,
    TrainSpec,
};
use basestab::geometry::{Pose, ATOMIC_TOL, COMPOSED_TOL};
use basestab::latency::{linear_search, LatencySearchConfig};
use basestab::predictor::{gradient_check, HeadMode, PredictorConfig, PredictorModel, TrainConfig};
use basestab::sim::{run_scenario, MotionProfile, PredictorChoice, Profile, Scenario, ScenarioRig, Variant};
use basestab::{Action, ActionChunk, ActionManager, EnsembleConfig, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let t = Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0));
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if q.iter().map(|v| v * v).sum::<f64>() > 1e-3 {
            return Pose::from_wxyz(t, q[0], q[1], q[2], q[3]);
        }
    }
}

fn geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_assoc, mut worst_inv, mut worst_rel) = (0.0f64, 0.0f64, 0.0f64);
    let dist = |a: &Pose, b: &Pose| a.translation_distance(b).max(basestab::geometry::rotation_distance(a, b));
    for _ in 0..10_000 {
        let (a, b, c) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
        worst_assoc = worst_assoc.max(dist(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c))));
        worst_inv = worst_inv
            .max(dist(&a.compose(&a.inverse()), &Pose::identity()))
            .max(dist(&a.inverse().compose(&a), &Pose::identity()));
        worst_rel = worst_rel.max(dist(&a.compose(&a.relative(&b)), &b));
    }
    ensure(worst_assoc < COMPOSED_TOL, || format!("associativity error {worst_assoc:e}"))?;
    ensure(worst_inv < ATOMIC_TOL, || format!("inverse error {worst_inv:e}"))?;
    ensure(worst_rel < COMPOSED_TOL, || format!("relative round-trip error {worst_rel:e}"))?;
    Ok(format!(
        "10^4 poses, max errors assoc {worst_assoc:.1e} inverse {worst_inv:.1e} relative {worst_rel:.1e}"
    ))
}

const T: f64 = 0.2;

fn curve(k: f64, c: &[f64; 3]) -> Action {
    Action::at(c[0] * k, 0.1 * (c[1] * k).sin(), c[2] * k * k)
}

fn action_manager() -> Outcome {
    let cfg = EnsembleConfig::default();
    let shapes = [[0.02, 0.4, 0.001], [-0.03, 0.9, 0.002], [0.01, 0.25, -0.0015]];
    let mut cases = 0;
    for c in &shapes {
        let buf = ActionBuffer::from_entries(0.0, T, 3, 0, (0..30).map(|k| (curve(k as f64, c), 1.0)));
        for t2 in 4..=16i64 {
            for s in -3..=3i64 {
                let actions = (0..8).map(|j| curve((t2 + j + s) as f64, c)).collect();
                let chunk = ActionChunk::new((t2 - 1) as f64 * T, 0.0, T, actions).unwrap();
                let t = align_chunk(&buf, &chunk, t2, &cfg).map_err(|e| e.to_string())?;
                ensure(t == t2 - s, || format!("shift {s} at t2={t2}: got offset {}", t2 - t))?;
                cases += 1;
            }
        }
    }

    let chunk = ActionChunk::new(0.0, T, T, (1..=8).map(|k| curve(k as f64, &shapes[0])).collect()).unwrap();
    let mut m = ActionManager::new(T, cfg);
    m.ingest(&chunk, chunk.available_at()).map_err(|e| e.to_string())?;
    let first: Vec<_> = m.buffer().entries().map(|(_, e)| (e.action, e.weight)).collect();
    ensure(first.len() == chunk.len(), || "first merge changed the length".into())?;
    for (i, (a, w)) in first.iter().enumerate() {
        ensure(*a == chunk.actions[i] && *w == cfg.weight(i + 1), || format!("first merge differs at {i}"))?;
    }
    let mut buf = m.buffer().clone();
    let t0 = buf.first_step();
    ensemble_merge(&mut buf, &chunk, t0, t0, &cfg).map_err(|e| e.to_string())?;
    for ((_, e), (a, _)) in buf.entries().zip(&first) {
        ensure((e.action.position - a.position).norm() < 1e-15, || "re-merge moved an action".into())?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..1_000 {
        let mut m = ActionManager::new(T, cfg);
        let mut now = 0.0f64;
        let mut cursor = i64::MIN;
        let mut executed: Vec<(i64, Action)> = Vec::new();
        for _ in 0..rng.random_range(1..40) {
            if rng.random_bool(0.5) {
                let obs = (now - rng.random_range(0.0..0.5)).max(0.0);
                let first = (obs / T).round() as i64 + 1;
                let shift = rng.random_range(-3..=3);
                let len = rng.random_range(1..12);
                let actions = (0..len)
                    .map(|j| {
                        let a = curve((first + j + shift) as f64, &shapes[1]);
                        Action::new(a.position + Vec3::from_fn(|_, _| rng.random_range(-0.01..0.01)))
                    })
                    .collect();
                let c = ActionChunk::new(obs, now - obs, T, actions).unwrap();
                m.ingest(&c, now).map_err(|e| e.to_string())?;
            } else {
                now += rng.random_range(0.0..0.6);
                m.advance(now);
            }
            let b = m.buffer();
            if !b.is_empty() {
                ensure(b.exec_cursor() >= cursor, || format!("case {case}: cursor moved back"))?;
                cursor = b.exec_cursor();
            }
            for (step, a) in &executed {
                if let Some(e) = b.entry(*step) {
                    ensure(e.action == *a, || format!("case {case}: executed step {step} rewritten"))?;
                }
            }
            executed = b
                .entries()
                .filter(|(k, _)| *k < b.exec_cursor())
                .map(|(k, e)| (k, e.action))
                .collect();
        }
    }
    Ok(format!("{cases} shift cases, first-merge, re-merge, 1000 interleavings"))
}

fn gradient() -> Outcome {
    let mut worst = 0.0f64;
    for head in [HeadMode::FinalState, HeadMode::LastFrames] {
        let cfg = PredictorConfig {
            hidden: 8,
            input_frames: 10,
            output_frames: 3,
            frequency: 50.0,
            head,
        };
        let model = PredictorModel::random(cfg, 11).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<[f64; 6]> = (0..10).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
        let y: Vec<[f64; 6]> = (0..3).map(|_| std::array::from_fn(|_| rng.random_range(-0.5..0.5))).collect();
        let r = gradient_check(&model, &x, &y).map_err(|e| e.to_string())?;
        worst = worst.max(r.max_relative_error);
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("H=8 l0=10 l1=3, max relative error {worst:.2e}"))
}

fn oracle_exactness() -> Outcome {
    let sc = Scenario::end_hold();
    ensure(sc.motion == MotionProfile::sinusoid(0.05, 0.5) && sc.duration == 30.0, || "unexpected defaults".into())?;
    let r = run_scenario(&sc, None).map_err(|e| e.to_string())?;
    ensure(r.stabilizer_latency == Some(sc.exact_latency()), || "full variant not at exact latency".into())?;
    ensure(r.end_hold_stddev < 1e-6, || format!("marker stddev {:e} m", r.end_hold_stddev))?;
    Ok(format!("30 s end-hold, marker stddev {:.2e} m", r.end_hold_stddev))
}

fn latency_recovery() -> Outcome {
    let search = LatencySearchConfig::default();
    let mut worst = 0.0f64;
    for injected in [0.1, 0.2, 0.3, 0.4] {
        for seed in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sc = Scenario::end_hold();
            sc.seed = seed;
            sc.motion = MotionProfile::Sinusoid {
                amplitude: 0.05,
                frequency: rng.random_range(0.4..0.6),
                axis: [1.0, 0.0, 0.0],
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            };
            sc.sensor.sensor_latency = injected - sc.arm.actuation_lag;
            let est = linear_search(&ScenarioRig::new(sc, None), &search).map_err(|e| e.to_string())?;
            let err = (est.delta_t - injected).abs();
            ensure(err <= search.step + 1e-9, || format!("L={injected} seed {seed}: estimate {}", est.delta_t))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("12 searches, worst |estimate - L| = {worst:.3} s"))
}

fn learned_improvement() -> Outcome {
    let spec = TrainSpec {
        profile: Profile::Desk,
        data_seconds: 60.0,
        stride: 4,
        train: TrainConfig {
            epochs: 60,
            learning_rate: 3e-3,
            ..Default::default()
        },
        ..Default::default()
    };
    let trained = basestab::cli::train_predictor(&spec).map_err(|e| e.to_string())?;
    let model = trained.model;
    let mut sc = Scenario::end_hold().with_profile(Profile::Desk);
    sc.stabilizer.predictor = PredictorChoice::Learned {
        checkpoint: String::new(),
    };
    let est = calibrate(
        &CalibrateSpec {
            scenario: sc.clone(),
            search: LatencySearchConfig::default(),
        },
        Some(&model),
    )
    .map_err(|e| e.to_string())?;
    let variance = |variant: Variant, latency: Option<f64>| -> Result<f64, String> {
        let mut s = sc.clone();
        s.variant = variant;
        s.stabilizer.latency = latency;
        let r = run_scenario(&s, Some(&model)).map_err(|e| e.to_string())?;
        Ok(r.end_hold_stddev.powi(2))
    };
    let off = variance(Variant::Manager, None)?;
    let full = variance(Variant::Full, Some(est.delta_t))?;
    let zero = variance(Variant::StabilizerZero, None)?;
    let ratio = off / full;
    ensure(ratio >= 5.0, || format!("variance ratio {ratio:.2} (uncompensated {off:.3e}, compensated {full:.3e})"))?;
    ensure(zero > full, || format!("latency=0 variance {zero:.3e} not above {full:.3e}"))?;
    Ok(format!(
        "train loss {:.1e}, estimated latency {:.3} s (exact {:.3}), variance uncompensated {off:.2e} / compensated {full:.2e} = {ratio:.0}x, latency=0 {zero:.2e}",
        trained.report.final_loss,
        est.delta_t,
        sc.exact_latency()
    ))
}

fn ablation_ordering() -> Outcome {
    let spec = AblationSpec::default();
    ensure(spec.trials_per_variant == 15, || "default trial count changed".into())?;
    let res = ablation(&spec, None).map_err(|e| e.to_string())?;
    let rate = |v| res.rate(v).unwrap_or(f64::NAN);
    let (b, m, f) = (rate(Variant::Baseline), rate(Variant::Manager), rate(Variant::Full));
    let line = format!(
        "baseline {b:.2} manager {m:.2} stabilizer_zero {:.2} stabilizer_half {:.2} full {f:.2} (latency {:.3} s)",
        rate(Variant::StabilizerZero),
        rate(Variant::StabilizerHalf),
        res.full_latency
    );
    ensure(b <= m && m <= f, || format!("ordering violated: {line}"))?;
    ensure(f - b >= 0.3, || format!("improvement below 0.3: {line}"))?;
    Ok(line)
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    names
}

fn determinism() -> Outcome {
    let short = Scenario {
        duration: 4.0,
        motion: MotionProfile::filtered_shake(7),
        ..Scenario::end_hold()
    };
    let mut ablation_spec = AblationSpec {
        trials_per_variant: 2,
        ..Default::default()
    };
    ablation_spec.scenario.duration = 4.0;
    ablation_spec.full_latency = FullLatency::Estimate;
    let jobs = vec![
        Job::Train(TrainSpec {
            profile: Profile::Desk,
            hidden: Some(6),
            data_seconds: 10.0,
            stride: 8,
            train: TrainConfig {
                epochs: 3,
                ..Default::default()
            },
            ..Default::default()
        }),
        Job::Calibrate(CalibrateSpec {
            scenario: short.clone(),
            search: LatencySearchConfig {
                dwell: 2.0,
                pixel_noise: 0.3,
                noise_seed: 5,
                ..Default::default()
            },
        }),
        Job::Run {
            scenario: short.clone(),
        },
        Job::Ablation(ablation_spec),
        Job::Heatmap(HeatmapSpec {
            scenario: short,
            ..Default::default()
        }),
    ];
    let mut compared = 0;
    for job in &jobs {
        let a = tempfile::tempdir().map_err(|e| e.to_string())?;
        let b = tempfile::tempdir().map_err(|e| e.to_string())?;
        let out = execute(job, a.path()).map_err(|e| format!("{}: {e}", job.name()))?;
        RunManifest::load(&out.manifest).map_err(|e| e.to_string())?;
        replay(&out.manifest, b.path()).map_err(|e| format!("{} replay: {e}", job.name()))?;
        let names = csv_files(a.path());
        ensure(!names.is_empty(), || format!("{} wrote no CSV", job.name()))?;
        ensure(names == csv_files(b.path()), || format!("{}: replay wrote different files", job.name()))?;
        for n in &names {
            let same = std::fs::read(a.path().join(n)).unwrap() == std::fs::read(b.path().join(n)).unwrap();
            ensure(same, || format!("{}: {n} differs after replay", job.name()))?;
            compared += 1;
        }
    }
    Ok(format!("{} commands, {compared} CSVs byte-identical on replay", jobs.len()))
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(u8, &str, u64, fn() -> Outcome); 8] = [
        (1, "geometry suite", 5, geometry),
        (2, "action-manager suite", 10, action_manager),
        (3, "predictor gradient check", 30, gradient),
        (4, "oracle exactness", 10, oracle_exactness),
        (5, "latency recovery", 120, latency_recovery),
        (6, "learned-predictor improvement", 300, learned_improvement),
        (7, "ablation ordering", 300, ablation_ordering),
        (8, "determinism", 300, determinism),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > Duration::from_secs(budget) => {
                Err(format!("{detail}; over the {budget} s budget"))
            }
            other => other,
        };
        let secs = elapsed.as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{id}] {name}: {detail} ({secs:.2} s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL [{id}] {name}: {why} ({secs:.2} s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
