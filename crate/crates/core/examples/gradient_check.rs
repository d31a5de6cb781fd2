//! Compare the hand-written backward pass against central differences.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use basestab::predictor::{gradient_check, HeadMode, PredictorConfig, PredictorModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let cfg = PredictorConfig {
        hidden: 8,
        input_frames: 10,
        output_frames: 3,
        frequency: 50.0,
        head: HeadMode::FinalState,
    };
    let model = PredictorModel::random(cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<[f64; 6]> = (0..cfg.input_frames)
        .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
        .collect();
    let y: Vec<[f64; 6]> = (0..cfg.output_frames)
        .map(|_| std::array::from_fn(|_| rng.random_range(-0.5..0.5)))
        .collect();
    let report = gradient_check(&model, &x, &y).unwrap();
    println!("{} parameters", cfg.parameter_count());
    for (name, err) in &report.per_tensor {
        println!("{name:>12}  {err:.2e}");
    }
    println!("max relative error {:.2e}", report.max_relative_error);
}
