//! Generates a small dataset with an instance-held-out split and prints a
//! summary per category.
//!
//! `cargo run --release --example make_dataset -- [out_dir] [n_scenes]`

use std::collections::BTreeMap;
use std::path::PathBuf;

use handlayout::synth::{generate_scenes, split_by_instance, write_dataset, GeneratorConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> handlayout::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/dataset".into()));
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let cfg = GeneratorConfig::default();
    let scenes = generate_scenes(&cfg, n, 0)?;

    let mut per_category: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for s in &scenes {
        let e = per_category.entry(s.category.to_string()).or_default();
        e.0 += 1;
        e.1 += s.gt_layout.scale();
    }
    for (cat, (count, total)) in &per_category {
        println!(
            "{cat:<13} {count:>4} scenes, mean palm scale {:.3}",
            total / *count as f64
        );
    }

    let manifest = write_dataset(&scenes, &out)?;
    let (train, test) = split_by_instance(&manifest, 5, &mut ChaCha8Rng::seed_from_u64(0))?;
    train.save("train.txt")?;
    test.save("test.txt")?;
    println!("held-out instances {:?}", test.instance_ids());
    println!(
        "{} train / {} test scenes in {}",
        train.len(),
        test.len(),
        out.display()
    );
    Ok(())
}
