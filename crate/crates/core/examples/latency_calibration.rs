//! Recover an unknown sensor-to-actuator latency from the end-hold
//! stability curve.
//!
//! ```text
//! cargo run --release --example latency_calibration -- 0.3
//! ```

use basestab::latency::{linear_search, LatencySearchConfig};
use basestab::sim::{Scenario, ScenarioRig};

fn main() {
    let injected: f64 = std::env::args().nth(1).map(|s| s.parse().expect("seconds")).unwrap_or(0.3);
    let mut sc = Scenario::end_hold();
    sc.sensor.sensor_latency = injected - sc.arm.actuation_lag;
    let cfg = LatencySearchConfig::default();
    let est = linear_search(&ScenarioRig::new(sc, None), &cfg).expect("search");
    let top = est.curve.iter().map(|m| m.ratio).fold(0.0, f64::max).max(1e-12);
    for m in &est.curve {
        let bar = "#".repeat((m.ratio / top * 50.0) as usize);
        println!("{:.3}  {:>9.4}  {bar}", m.delta_t, m.ratio);
    }
    println!("injected {injected:.3} s, estimated {:.3} s", est.delta_t);
}
