//! The manager behind a lock, with a policy thread merging chunks while
//! the main thread runs the control loop on the wall clock.
//!
//! ```text
//! cargo run --example shared_manager
//! ```

use std::sync::{atomic::AtomicBool, atomic::Ordering, Arc};
use std::thread;
use std::time::{Duration, Instant};

use basestab::action::{interpolate, SharedActionManager};
use basestab::{Action, ActionChunk, ActionManager, EnsembleConfig};

const PERIOD: f64 = 0.2;

fn main() {
    let shared = SharedActionManager::new(ActionManager::new(PERIOD, EnsembleConfig::default()));
    let start = Instant::now();
    let done = Arc::new(AtomicBool::new(false));

    let policy = {
        let shared = shared.clone();
        let done = done.clone();
        thread::spawn(move || {
            while !done.load(Ordering::Relaxed) {
                let obs = start.elapsed().as_secs_f64();
                thread::sleep(Duration::from_millis(120)); // inference
                let actions = (1..=8)
                    .map(|i| Action::at((obs + i as f64 * PERIOD).sin() * 0.1, 0.0, 0.2))
                    .collect();
                let c = ActionChunk::new(obs, start.elapsed().as_secs_f64() - obs, PERIOD, actions).unwrap();
                shared.ingest(&c, start.elapsed().as_secs_f64()).unwrap();
            }
        })
    };

    let mut ticks = 0;
    let mut commanded = 0;
    while start.elapsed() < Duration::from_secs(2) {
        let now = start.elapsed().as_secs_f64();
        if let Some(a) = shared.execute(now, |buf| interpolate(buf, now).ok()) {
            commanded += 1;
            if ticks % 10 == 0 {
                println!("t={now:.2} x={:.4}", a.position.x);
            }
        }
        ticks += 1;
        thread::sleep(Duration::from_millis(20));
    }
    done.store(true, Ordering::Relaxed);
    policy.join().unwrap();
    println!("{commanded}/{ticks} ticks had an action");
}
