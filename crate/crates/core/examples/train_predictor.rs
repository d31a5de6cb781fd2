//! Train the motion predictor on a generated shake log at desk scale and
//! save the checkpoint.
//!
//! ```text
//! cargo run --release --example train_predictor -- out/predictor
//! ```

use std::path::PathBuf;

use basestab::cli::{execute, Job, TrainSpec};
use basestab::predictor::TrainConfig;
use basestab::sim::Profile;

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/predictor".into()));
    let spec = TrainSpec {
        profile: Profile::Desk,
        data_seconds: 60.0,
        train: TrainConfig {
            epochs: 60,
            learning_rate: 3e-3,
            ..Default::default()
        },
        ..Default::default()
    };
    let done = execute(&Job::Train(spec), &out).expect("training");
    for line in done.summary {
        println!("{line}");
    }
    println!("manifest: {}", done.manifest.display());
}
