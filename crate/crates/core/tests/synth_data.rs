use std::fs;

use handlayout::synth::{
    check_scene_invariants, generate_scenes, read_dataset, split_by_instance, write_dataset, DatasetManifest,
    GeneratorConfig, MANIFEST_FILE,
};
use handlayout::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn thousand_scenes_satisfy_the_construction_invariants() {
    let cfg = GeneratorConfig::default();
    let scenes = generate_scenes(&cfg, 1000, 2024).unwrap();
    for (k, s) in scenes.iter().enumerate() {
        check_scene_invariants(s).unwrap_or_else(|e| panic!("scene {k}: {e}"));
        let c = s.gt_layout.center();
        assert!(c[0].abs() < 1.0 && c[1].abs() < 1.0, "scene {k}: palm off frame {c:?}");
        assert!(s.object_grid.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let instances: std::collections::BTreeSet<_> = scenes.iter().map(|s| s.instance_id).collect();
    assert_eq!(instances.len(), cfg.n_instances);
}

#[test]
fn dataset_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = generate_scenes(&GeneratorConfig::default(), 100, 5).unwrap();
    let manifest = write_dataset(&scenes, dir.path()).unwrap();
    assert_eq!(manifest.len(), 100);
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back, scenes);
}

#[test]
fn truncated_grid_names_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = generate_scenes(&GeneratorConfig::default(), 4, 5).unwrap();
    let manifest = write_dataset(&scenes, dir.path()).unwrap();
    let victim = dir.path().join(&manifest.records[2].dir).join("object.pgm");
    let bytes = fs::read(&victim).unwrap();
    fs::write(&victim, &bytes[..bytes.len() - 10]).unwrap();
    match read_dataset(dir.path()) {
        Err(Error::Sample { id, .. }) => assert_eq!(id, 2),
        other => panic!("expected a sample error, got {other:?}"),
    }
}

#[test]
fn manifest_count_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = generate_scenes(&GeneratorConfig::default(), 3, 5).unwrap();
    write_dataset(&scenes, dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).unwrap().replace("count 3", "count 4");
    fs::write(&path, text).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Dataset(_))));
}

fn manifest_with_instances(n_scenes: usize, n_instances: usize) -> DatasetManifest {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GeneratorConfig {
        n_instances,
        ..GeneratorConfig::default()
    };
    let scenes = generate_scenes(&cfg, n_scenes, 9).unwrap();
    write_dataset(&scenes, dir.path()).unwrap()
}

#[test]
fn instance_split_is_disjoint_and_complete() {
    let m = manifest_with_instances(300, 20);
    assert_eq!(m.instance_ids().len(), 20);
    let (train, test) = split_by_instance(&m, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let (tr, te) = (train.instance_ids(), test.instance_ids());
    assert_eq!(te.len(), 5);
    assert!(tr.is_disjoint(&te));
    assert_eq!(tr.union(&te).count(), 20);
    assert_eq!(train.len() + test.len(), m.len());
    assert!(test.records.iter().all(|r| te.contains(&r.instance_id)));

    let again = split_by_instance(&m, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(again, (train, test));

    let (_, empty) = split_by_instance(&m, 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(empty.is_empty());
    assert!(matches!(
        split_by_instance(&m, 20, &mut ChaCha8Rng::seed_from_u64(1)),
        Err(Error::HeldOutTooLarge { .. })
    ));
}

#[test]
fn split_manifests_reload() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = generate_scenes(&GeneratorConfig::default(), 40, 3).unwrap();
    let m = write_dataset(&scenes, dir.path()).unwrap();
    let (train, _) = split_by_instance(&m, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let path = train.save("train.txt").unwrap();
    assert_eq!(DatasetManifest::load(&path).unwrap(), train);
}
