//! Samples contact locations from a heatmap around the handle and generates
//! one layout pinned to each, then writes the overlay.
//!
//! `cargo run --release --example heatmap_sampling -- [out_dir]`

use std::path::PathBuf;

use handlayout::diffusion::{NoiseSchedule, Sampler, ScheduleFamily};
use handlayout::geometry::TemplateSpec;
use handlayout::render::{compose_overlay, heatmap_guided_sample, save_image};
use handlayout::synth::{entropy, generate_scenes, heatmap_for_scene, GeneratorConfig};
use handlayout::train::{train_on_samples, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> handlayout::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/heatmap".into()));
    std::fs::create_dir_all(&out).map_err(|e| handlayout::Error::Config(e.to_string()))?;
    let scenes = generate_scenes(&GeneratorConfig::default(), 300, 0)?;
    let cfg = TrainConfig {
        steps: 400,
        batch: 16,
        ..TrainConfig::default()
    };
    let model = train_on_samples(&scenes, &cfg, |_, _| {})?.params;

    let scene = &scenes[3];
    let heat = heatmap_for_scene(scene, 0.15);
    println!(
        "heatmap entropy {:.3} nats (uniform would be {:.3})",
        entropy(&heat),
        (32.0f64 * 32.0).ln()
    );
    let template = TemplateSpec::default();
    let sched = NoiseSchedule::build(100, ScheduleFamily::Linear)?;
    let bound = model.conditioned(&scene.object_grid, &template);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let drawn = heatmap_guided_sample(&bound, &heat, 6, &sched, Sampler::Ddim { eta: 0.0 }, &mut rng)?;
    for (p, l) in drawn.points.iter().zip(&drawn.layouts) {
        println!("point ({:+.3}, {:+.3}) -> {l}", p[0], p[1]);
    }
    let overlay = compose_overlay(&scene.object_grid, &drawn.layouts, &template)?;
    save_image(&overlay, &out.join("overlay.pgm"), true)?;
    println!("overlay written to {}", out.display());
    Ok(())
}
