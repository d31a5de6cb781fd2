use basestab::action::{align_chunk, ensemble_merge, Action, ActionBuffer, ActionChunk, ActionManager, EnsembleConfig};
use basestab::Vec3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const T: f64 = 0.2;

/// Smooth, non-periodic 3-D curve sampled on the step grid.
fn g(k: f64) -> Action {
    Action::new(Vec3::new(0.02 * k, 0.1 * (0.4 * k).sin(), 0.001 * k * k))
}

fn chunk(obs_step: i64, len: usize, shift: i64) -> ActionChunk {
    let first = obs_step + 1;
    let actions = (0..len as i64).map(|j| g((first + j + shift) as f64)).collect();
    ActionChunk::new(obs_step as f64 * T, 0.0, T, actions).unwrap()
}

#[test]
fn alignment_recovers_every_shift() {
    let cfg = EnsembleConfig::default();
    let buf = ActionBuffer::from_entries(0.0, T, 3, 0, (0..24).map(|k| (g(k as f64), 1.0)));
    for t2 in [6i64, 8, 10] {
        for s in -3..=3 {
            let c = chunk(t2 - 1, 8, s);
            let t = align_chunk(&buf, &c, t2, &cfg).unwrap();
            assert_eq!(t, t2 - s, "t2={t2} shift={s}");
        }
    }
}

#[test]
fn manager_recovers_every_shift() {
    for s in -3..=3 {
        let mut m = ActionManager::new(T, EnsembleConfig::default());
        m.ingest(&chunk(0, 24, 0), 0.0).unwrap();
        let out = m.ingest(&chunk(5, 12, s), 6.0 * T).unwrap();
        assert!(out.aligned);
        assert_eq!(out.t2, 6);
        assert_eq!(out.t_u, 6 - s, "shift {s}");
        // aligned merge of a shifted copy of the same curve leaves the buffer unchanged
        for (step, e) in m.buffer().entries().filter(|(k, _)| *k >= 6 && *k < 18) {
            assert!((e.action.position - g(step as f64).position).norm() < 1e-12);
        }
    }
}

#[test]
fn first_merge_equals_chunk() {
    let cfg = EnsembleConfig::default();
    let mut m = ActionManager::new(T, cfg);
    let c = chunk(3, 8, 0);
    let out = m.ingest(&c, 4.0 * T).unwrap();
    assert!(!out.aligned);
    let first = m.buffer().chunk_first_step(&c).unwrap();
    assert_eq!(m.buffer().first_step(), first);
    assert_eq!(m.buffer().len(), c.len());
    for (i, (_, e)) in m.buffer().entries().enumerate() {
        assert_eq!(e.action, c.actions[i]);
        assert_eq!(e.weight, cfg.weight(i + 1));
    }
}

#[test]
fn re_merging_the_same_chunk_is_idempotent() {
    let cfg = EnsembleConfig::default();
    let mut buf = ActionBuffer::new(T, 3);
    let c = chunk(0, 8, 0);
    ensemble_merge(&mut buf, &c, 1, 1, &cfg).unwrap();
    let once: Vec<_> = buf.entries().map(|(_, e)| (e.action, e.weight)).collect();
    ensemble_merge(&mut buf, &c, 1, 1, &cfg).unwrap();
    for ((_, e), (a, w)) in buf.entries().zip(&once) {
        assert!((e.action.position - a.position).norm() < 1e-15);
        assert!((e.weight - 2.0 * w).abs() < 1e-15);
    }
}

#[derive(Debug, Clone)]
enum Op {
    Merge { lead: f64, len: usize, shift: i64, noise: u64 },
    Advance(f64),
}

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0.0..0.5f64, 1usize..12, -3i64..=3, any::<u64>())
            .prop_map(|(lead, len, shift, noise)| Op::Merge { lead, len, shift, noise }),
        (0.0..0.6f64).prop_map(Op::Advance),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    /// Executed steps are never rewritten and the cursor never moves back.
    #[test]
    fn no_backtracking(ops in prop::collection::vec(op_strategy(), 1..40)) {
        let cfg = EnsembleConfig::default();
        let mut m = ActionManager::new(T, cfg);
        let mut now = 0.0;
        let mut executed: Vec<(i64, Action)> = Vec::new();
        let mut cursor = i64::MIN;
        for op in ops {
            match op {
                Op::Merge { lead, len, shift, noise } => {
                    let obs = (now - lead).max(0.0);
                    let mut rng = ChaCha8Rng::seed_from_u64(noise);
                    let first = (obs / T).round() as i64 + 1;
                    let actions = (0..len as i64)
                        .map(|j| {
                            let a = g((first + j + shift) as f64);
                            Action::new(a.position + Vec3::from_fn(|_, _| rng.random_range(-0.01..0.01)))
                        })
                        .collect();
                    let c = ActionChunk::new(obs, now - obs, T, actions).unwrap();
                    m.ingest(&c, now).unwrap();
                }
                Op::Advance(dt) => {
                    now += dt;
                    m.advance(now);
                }
            }
            let buf = m.buffer();
            if !buf.is_empty() {
                prop_assert!(buf.exec_cursor() >= cursor);
                cursor = buf.exec_cursor();
            }
            for (step, a) in &executed {
                if let Some(e) = buf.entry(*step) {
                    prop_assert_eq!(e.action, *a, "step {} rewritten", step);
                }
            }
            executed = buf
                .entries()
                .filter(|(k, _)| *k < buf.exec_cursor())
                .map(|(k, e)| (k, e.action))
                .collect();
            for (_, e) in buf.entries() {
                let sum: Vec3 = e.contributions.iter().map(|c| c.action.position * c.coefficient).sum();
                prop_assert!((sum - e.action.position).norm() < 1e-9);
            }
        }
    }
}
