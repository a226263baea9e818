//! Trains the layout denoiser on generated scenes and reports contact recall
//! on scenes of held-out object instances.
//!
//! `cargo run --release --example train_eval -- [steps] [seed]`

use std::time::Instant;

use handlayout::metrics::{evaluate, EvalConfig};
use handlayout::synth::{generate_scenes, split_samples_by_instance, GeneratorConfig};
use handlayout::train::{train_on_samples, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> handlayout::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(5000);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let scenes = generate_scenes(&GeneratorConfig::default(), 1200, seed)?;
    let (train, test) = split_samples_by_instance(scenes, 5, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let test = &test[..test.len().min(100)];
    println!("{} training scenes, {} held-out scenes", train.len(), test.len());

    let cfg = TrainConfig {
        steps,
        seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let outcome = train_on_samples(&train, &cfg, |step, loss| {
        println!("step {step:>5}  loss {loss:.5}  ({:.1?})", start.elapsed());
    })?;
    let ev = evaluate(&outcome.params, test, &EvalConfig::default())?;
    println!("contact recall on held-out instances: {:.3}", ev.contact_recall);
    Ok(())
}
