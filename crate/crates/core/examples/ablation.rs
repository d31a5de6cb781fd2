//! Success rates of the five pipeline variants on the dynamic reach task.
//!
//! ```text
//! cargo run --release --example ablation -- out/ablation
//! ```

use std::path::PathBuf;

use basestab::cli::{cmd_ablation, AblationSpec};

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/ablation".into()));
    std::fs::create_dir_all(&out).unwrap();
    let (result, files, summary) = cmd_ablation(&AblationSpec::default(), &out).expect("ablation");
    for line in summary {
        println!("{line}");
    }
    println!("monotone: {}", result.is_monotone());
    for f in files {
        println!("wrote {}", f.display());
    }
}
