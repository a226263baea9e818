//! Trains the three ablation variants on a shared split and prints the
//! comparison table.
//!
//! `cargo run --release --example ablation -- [steps]`

use handlayout::metrics::{ablation_suite, format_ablation_table, EvalConfig};
use handlayout::synth::{generate_scenes, split_samples_by_instance, GeneratorConfig};
use handlayout::train::TrainConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> handlayout::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let scenes = generate_scenes(&GeneratorConfig::default(), 1200, 0)?;
    let (train, test) = split_samples_by_instance(scenes, 5, &mut ChaCha8Rng::seed_from_u64(0))?;
    let test = &test[..test.len().min(100)];
    let cfg = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    let runs = ablation_suite(&cfg, &train, test, &EvalConfig::default())?;
    let rows: Vec<_> = runs.iter().map(|r| r.row.clone()).collect();
    print!("{}", format_ablation_table(&rows));
    for r in &runs {
        println!("{:<20} trained in {:.1?}", r.row.label, r.train_time);
    }
    Ok(())
}
