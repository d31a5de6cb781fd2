//! Load a scenario from TOML, run it and write the per-tick trace.
//!
//! ```text
//! cargo run --release --example scenario_file -- scenario.toml out/run
//! ```

use std::path::PathBuf;

use basestab::cli::cmd_run;
use basestab::sim::Scenario;

const DEFAULT: &str = r#"
duration = 10.0
variant = "full"

[motion]
kind = "uav_drift"
rms = 0.03
correlation_time = 1.5
seed = 4

[task]
kind = "reach"
target = [0.45, 0.1, 0.15]
"#;

fn main() {
    let mut args = std::env::args().skip(1);
    let sc = match args.next() {
        Some(path) => Scenario::load(path.as_ref()).expect("scenario"),
        None => Scenario::from_toml(DEFAULT).expect("scenario"),
    };
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/run".into()));
    std::fs::create_dir_all(&out).unwrap();
    let (report, files, summary) = cmd_run(&sc, &out).expect("run");
    for line in summary {
        println!("{line}");
    }
    println!("success time: {:?}", report.success_time);
    for f in files {
        println!("wrote {}", f.display());
    }
}
