use basestab::sim::{
    planar_spread, run_scenario, write_trace_csv, MotionProfile, PredictorChoice, Scenario, Task, Variant,
};

fn reach(variant: Variant, motion: MotionProfile) -> Scenario {
    Scenario {
        variant,
        motion,
        ..Scenario::reach()
    }
}

#[test]
fn static_reach_succeeds_for_every_variant() {
    for v in Variant::ALL {
        let r = run_scenario(&reach(v, MotionProfile::Static), None).unwrap();
        assert!(r.success, "{v}");
        assert!(r.final_distance < 1e-9, "{v}: {}", r.final_distance);
    }
}

#[test]
fn shaking_base_defeats_the_synchronous_baseline() {
    for amplitude in [0.05, 0.08] {
        let sc = reach(Variant::Baseline, MotionProfile::sinusoid(amplitude, 0.5));
        assert!(!run_scenario(&sc, None).unwrap().success, "amplitude {amplitude}");
        let full = Scenario { variant: Variant::Full, ..sc };
        assert!(run_scenario(&full, None).unwrap().success, "amplitude {amplitude}");
    }
}

#[test]
fn compensation_narrows_the_end_hold_spread() {
    let spread = |v: Variant| {
        let sc = Scenario {
            variant: v,
            motion: MotionProfile::filtered_shake(3),
            duration: 15.0,
            ..Scenario::end_hold()
        };
        let r = run_scenario(&sc, None).unwrap();
        planar_spread(&r.settled_markers(sc.settle_time)).total_variance()
    };
    let manager = spread(Variant::Manager);
    let full = spread(Variant::Full);
    assert!(full < 0.01 * manager, "full {full} vs manager {manager}");
}

#[test]
fn constant_velocity_beats_no_compensation_on_a_slow_sinusoid() {
    let run = |v: Variant, p: PredictorChoice| {
        let mut sc = Scenario {
            variant: v,
            duration: 15.0,
            ..Scenario::end_hold()
        };
        sc.stabilizer.predictor = p;
        run_scenario(&sc, None).unwrap().end_hold_stddev
    };
    let cv = run(Variant::Full, PredictorChoice::ConstantVelocity);
    let off = run(Variant::Manager, PredictorChoice::Oracle);
    assert!(cv < off, "{cv} vs {off}");
}

#[test]
fn trace_is_deterministic_and_complete() {
    let sc = Scenario {
        motion: MotionProfile::uav_drift(5),
        duration: 4.0,
        ..Scenario::end_hold()
    };
    let dump = || {
        let r = run_scenario(&sc, None).unwrap();
        let mut out = Vec::new();
        write_trace_csv(&r.trace, &mut out).unwrap();
        (r.trace.len(), out)
    };
    let (n, a) = dump();
    let (_, b) = dump();
    assert_eq!(a, b);
    assert_eq!(n, (sc.duration * sc.control_hz).round() as usize + 1);
    let text = String::from_utf8(a).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 33);
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == 33));
}

#[test]
fn scenario_toml_round_trips() {
    let mut sc = Scenario::reach();
    sc.motion = MotionProfile::filtered_shake(11);
    sc.stabilizer.latency = Some(0.175);
    let text = sc.to_toml().unwrap();
    assert_eq!(Scenario::from_toml(&text).unwrap(), sc);
    assert!(matches!(Scenario::from_toml("duration = -1.0"), Err(e) if e.is_validation()));
    let partial = Scenario::from_toml("seed = 4\n[task]\nkind = \"reach\"\ntarget = [0.4, 0.0, 0.2]\n").unwrap();
    assert_eq!(partial.seed, 4);
    assert!(matches!(partial.task, Task::Reach { hold_time, .. } if hold_time == 2.0));
}
