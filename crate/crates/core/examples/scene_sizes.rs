//! Places hands in three crops of different widths so that every hand has
//! the same size in scene units.

use handlayout::diffusion::{NoiseSchedule, Sampler, ScheduleFamily};
use handlayout::geometry::TemplateSpec;
use handlayout::render::{relative_size, scene_consistent_sample};
use handlayout::synth::{generate_scenes, GeneratorConfig};
use handlayout::train::{train_on_samples, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> handlayout::Result<()> {
    let scenes = generate_scenes(&GeneratorConfig::default(), 300, 0)?;
    let cfg = TrainConfig {
        steps: 300,
        batch: 16,
        ..TrainConfig::default()
    };
    let model = train_on_samples(&scenes, &cfg, |_, _| {})?.params;

    let template = TemplateSpec::default();
    let sched = NoiseSchedule::build(100, ScheduleFamily::Linear)?;
    let widths = [0.3, 0.45, 0.9];
    let shared = 0.12;
    let layouts = scene_consistent_sample(
        &widths,
        shared,
        |i| model.conditioned(&scenes[i].object_grid, &template),
        &sched,
        Sampler::Ddim { eta: 0.0 },
        &mut ChaCha8Rng::seed_from_u64(2),
    )?;
    for (l, w) in layouts.iter().zip(widths) {
        println!(
            "crop width {w:.2}: relative size {:.4}, absolute {:.6}, layout {l}",
            l.scale(),
            l.scale() * w
        );
    }
    match relative_size(shared, 0.05) {
        Err(e) => println!("a 0.05-wide crop is rejected: {e}"),
        Ok(s) => println!("unexpected size {s}"),
    }
    Ok(())
}
