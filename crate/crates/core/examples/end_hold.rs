//! Hold the end effector on a world point while the base sways, once per
//! pipeline variant. Pass a checkpoint to use the learned predictor.
//!
//! ```text
//! cargo run --release --example end_hold
//! cargo run --release --example end_hold -- out/predictor/predictor.json
//! ```

use basestab::sim::{run_scenario, PredictorChoice, Profile, Scenario, Variant};

fn main() {
    let mut base = Scenario::end_hold();
    if let Some(path) = std::env::args().nth(1) {
        base = base.with_profile(Profile::Desk);
        base.stabilizer.predictor = PredictorChoice::Learned { checkpoint: path };
    }
    println!("exact latency {:.3} s", base.exact_latency());
    for v in Variant::ALL {
        let sc = Scenario { variant: v, ..base.clone() };
        let r = run_scenario(&sc, None).expect("scenario");
        println!("{:<16} marker stddev {:.6} m", v.name(), r.end_hold_stddev);
    }
}
