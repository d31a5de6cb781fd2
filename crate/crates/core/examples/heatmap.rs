//! Histogram of end-effector positions under random shaking, with and
//! without compensation.
//!
//! ```text
//! cargo run --release --example heatmap -- out/heatmap
//! ```

use std::fs::File;
use std::path::PathBuf;

use basestab::cli::{heatmap, HeatmapSpec};
use basestab::sim::{MotionProfile, Scenario, Variant};

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/heatmap".into()));
    std::fs::create_dir_all(&out).unwrap();
    for v in [Variant::Manager, Variant::Full] {
        let spec = HeatmapSpec {
            scenario: Scenario {
                variant: v,
                motion: MotionProfile::filtered_shake(3),
                ..Scenario::end_hold()
            },
            ..Default::default()
        };
        let (map, spread, _) = heatmap(&spec, None).expect("heatmap");
        let path = out.join(format!("heatmap_{v}.csv"));
        map.write_csv(File::create(&path).unwrap()).unwrap();
        println!(
            "{:<8} {} bins, major axis {:.1} deg, variance {:.2e} / {:.2e} m^2 -> {}",
            v.name(),
            map.bins.len(),
            spread.major_angle.to_degrees(),
            spread.major_variance,
            spread.minor_variance,
            path.display()
        );
    }
}
