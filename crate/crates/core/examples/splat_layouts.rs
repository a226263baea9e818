//! Splats a few layouts, prints their transforms and writes the masks.
//!
//! `cargo run --release --example splat_layouts -- [out_dir]`

use std::path::PathBuf;

use handlayout::geometry::{interpolate_layouts, layout_to_transform, splat, template_density, Layout, TemplateSpec};
use handlayout::render::render_mask;

fn main() -> handlayout::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/splat_layouts".into()));
    std::fs::create_dir_all(&out).map_err(|e| handlayout::Error::Config(e.to_string()))?;
    let spec = TemplateSpec::default();
    println!(
        "template at (0,0) {:.5}, (1,0) {:.5}, (-3,0) {:.5}",
        template_density([0.0, 0.0], &spec),
        template_density([1.0, 0.0], &spec),
        template_density([-3.0, 0.0], &spec)
    );

    let layouts = [
        ("identity", Layout::new(0.5, 0.0, 0.0, 1.0, 0.0)),
        ("shifted", Layout::new(0.5, 0.4, -0.3, 1.0, 0.0)),
        ("turned", Layout::new(0.5, 0.0, 0.0, 0.0, 1.0)),
        ("small-diagonal", Layout::new(0.35, -0.3, 0.3, -1.0, -1.0)),
        // same hand as small-diagonal
        ("equivalent", Layout::new(-0.35, -0.3, 0.3, -4.0, -4.0)),
    ];
    for (name, l) in layouts {
        let t = layout_to_transform(&l)?;
        let m = splat(&l, 64, 64, &spec)?;
        let (i, j) = m.argmax();
        println!(
            "{name:<15} scale {:.4}  maps (1,0) to {:?}  peak at pixel ({i},{j})",
            t.scale(),
            t.apply([1.0, 0.0])
        );
        render_mask(&m, &out.join(format!("{name}.pgm")))?;
    }
    let mid = interpolate_layouts(&layouts[1].1, &layouts[3].1, 0.5)?;
    println!("halfway between shifted and small-diagonal: {mid}");
    println!("masks written to {}", out.display());
    Ok(())
}
