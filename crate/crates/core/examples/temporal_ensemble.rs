//! Feed overlapping action chunks through the manager and watch alignment,
//! ensembling and interpolation.
//!
//! ```text
//! cargo run --example temporal_ensemble
//! ```

use basestab::{Action, ActionChunk, ActionManager, EnsembleConfig};

const PERIOD: f64 = 0.2;

fn chunk(obs_time: f64, latency: f64, lag_steps: f64) -> ActionChunk {
    // a policy tracking x(t) = 0.1 t, its output lagging by `lag_steps`
    let actions = (1..=8)
        .map(|i| Action::at(0.1 * (obs_time + (i as f64 - lag_steps) * PERIOD), 0.0, 0.2))
        .collect();
    ActionChunk::new(obs_time, latency, PERIOD, actions).expect("valid chunk")
}

fn main() {
    let mut m = ActionManager::new(PERIOD, EnsembleConfig::default());
    let mut now = 0.0;
    for (k, lag) in [0.0, 2.0, -1.0, 0.0].into_iter().enumerate() {
        let c = chunk(k as f64 * 0.4, 0.25, lag);
        while now + 1e-9 < c.available_at() {
            now += 0.02;
            m.advance(now);
        }
        let out = m.ingest(&c, now).expect("merge");
        println!(
            "chunk {k} at t={now:.2}: t2={} t_u={} aligned={} cursor={}",
            out.t2,
            out.t_u,
            out.aligned,
            m.buffer().exec_cursor()
        );
    }
    for tau in [0.75, 0.8, 0.85, 1.0] {
        println!("interpolate({tau}) = {:.4}", m.interpolate(tau).expect("in range").position.x);
    }
    m.buffer().write_csv(std::io::stdout()).expect("stdout");
}
