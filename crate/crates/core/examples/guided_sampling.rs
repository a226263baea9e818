//! Trains a small model briefly, then samples layouts for one scene freely
//! and with pinned coordinates.
//!
//! `cargo run --release --example guided_sampling -- [steps]`

use handlayout::diffusion::{sample_layout, GuidanceSpec, NoiseSchedule, Sampler, ScheduleFamily};
use handlayout::geometry::TemplateSpec;
use handlayout::metrics::constraint_error;
use handlayout::synth::{generate_scenes, GeneratorConfig};
use handlayout::train::{train_on_samples, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> handlayout::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let scenes = generate_scenes(&GeneratorConfig::default(), 300, 0)?;
    let cfg = TrainConfig {
        steps,
        batch: 16,
        ..TrainConfig::default()
    };
    let model = train_on_samples(&scenes, &cfg, |step, loss| println!("step {step:>4} loss {loss:.4}"))?.params;

    let template = TemplateSpec::default();
    let sched = NoiseSchedule::build(100, ScheduleFamily::Linear)?;
    let scene = &scenes[7];
    let bound = model.conditioned(&scene.object_grid, &template);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    println!("ground truth     {}", scene.gt_layout);
    for _ in 0..3 {
        println!(
            "free (ddpm)      {}",
            sample_layout(&bound, &sched, Sampler::Ddpm, None, &mut rng)?
        );
    }

    // pin the approach direction and palm size, let location follow
    let spec = GuidanceSpec::new([true, false, false, true, true], [0.4, 0.0, 0.0, 0.0, -1.0])?;
    let sampler = Sampler::Ddim { eta: 0.0 };
    let guided: Vec<_> = (0..4)
        .map(|_| sample_layout(&bound, &sched, sampler, Some(&spec), &mut rng))
        .collect::<handlayout::Result<_>>()?;
    for l in &guided {
        println!("a, b pinned      {l}");
    }
    let err = constraint_error(&guided, &vec![spec; guided.len()])?;
    println!("max constraint error {:.2e}", err.max);
    Ok(())
}
