//! Renders an interpolation between two layouts as overlay frames and one
//! side-by-side strip.
//!
//! `cargo run --release --example interpolation_strip -- [out_dir] [k_steps]`

use std::path::PathBuf;

use handlayout::geometry::{Layout, TemplateSpec};
use handlayout::render::{interpolate_demo, save_image, strip};
use handlayout::synth::{generate_scenes, GeneratorConfig};

fn main() -> handlayout::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/interpolation".into()));
    let k = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);
    std::fs::create_dir_all(&out).map_err(|e| handlayout::Error::Config(e.to_string()))?;

    let scene = generate_scenes(&GeneratorConfig::default(), 1, 11)?.remove(0);
    let from = scene.gt_layout;
    let to = Layout::new(0.4, -0.5, 0.5, 1.0, -0.5);
    let (layouts, frames) = interpolate_demo(&scene.object_grid, &from, &to, k, &TemplateSpec::default())?;
    for (i, (l, f)) in layouts.iter().zip(&frames).enumerate() {
        println!("frame {i}: {l}");
        save_image(f, &out.join(format!("frame_{i:02}.pgm")), false)?;
    }
    save_image(&strip(&frames)?, &out.join("strip.pgm"), true)?;
    println!("strip written to {}", out.display());
    Ok(())
}
