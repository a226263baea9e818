use handlayout::denoiser::{save_checkpoint, write_checkpoint, DenoiserParams};
use handlayout::diffusion::{forward_noise, NoiseSchedule, ScheduleFamily};
use handlayout::geometry::Layout;
use handlayout::metrics::{contact_recall, evaluate, gaussian_oracle_epsilon, oracle_coefficients, EvalConfig};
use handlayout::synth::{generate_scenes, GeneratorConfig, SceneSample};
use handlayout::train::{train, train_on_samples, TrainConfig};
use handlayout::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn scenes(n: usize, seed: u64) -> Vec<SceneSample> {
    generate_scenes(&GeneratorConfig::default(), n, seed).unwrap()
}

fn small(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch: 4,
        log_every: 10,
        ..TrainConfig::default()
    }
}

fn checkpoint_bytes(p: &DenoiserParams) -> Vec<u8> {
    let mut out = Vec::new();
    write_checkpoint(p, &mut out).unwrap();
    out
}

#[test]
fn oracle_beats_a_shifted_oracle() {
    let s = NoiseSchedule::build(100, ScheduleFamily::Linear).unwrap();
    let (mu, sigma) = (3.0, 0.5);
    let n = 100_000;
    for t in [5, 25, 50, 75, 95] {
        let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
        let (mut exact, mut shifted) = (0.0, 0.0);
        for _ in 0..n {
            let x0: f64 = mu + sigma * rng.sample::<f64, _>(StandardNormal);
            let eps: f64 = rng.sample(StandardNormal);
            let xt = forward_noise(&[x0], t, &[eps], &s).unwrap()[0];
            let e = gaussian_oracle_epsilon(xt, t, mu, sigma, &s);
            exact += (e - eps).powi(2);
            shifted += (e + 0.05 - eps).powi(2);
        }
        assert!(exact <= shifted, "t={t}: {exact} > {shifted}");
    }
}

#[test]
fn oracle_is_affine_with_the_closed_form_coefficients() {
    let s = NoiseSchedule::build(100, ScheduleFamily::Linear).unwrap();
    let (mu, sigma) = (3.0, 0.5);
    for t in [1, 30, 100] {
        let (sc, nc) = (s.signal_coef(t), s.noise_coef(t));
        let (slope, intercept) = oracle_coefficients(t, mu, sigma, &s);
        let want = nc / (sc * sc * sigma * sigma + nc * nc);
        assert!((slope - want).abs() < 1e-12);
        assert!((intercept + want * sc * mu).abs() < 1e-12);
        for x in [-2.0, 0.0, 1.7] {
            let e = gaussian_oracle_epsilon(x, t, mu, sigma, &s);
            assert!((e - (slope * x + intercept)).abs() < 1e-12);
        }
        assert_eq!(gaussian_oracle_epsilon(sc * mu, t, mu, sigma, &s), 0.0);
        let point = gaussian_oracle_epsilon(1.3, t, mu, 0.0, &s);
        assert!((point - (1.3 - sc * mu) / nc).abs() < 1e-12);
    }
}

#[test]
fn ground_truth_layouts_are_in_contact() {
    let sc = scenes(300, 4);
    let layouts: Vec<Layout> = sc.iter().map(|s| s.gt_layout).collect();
    let masks: Vec<_> = sc.iter().map(|s| &s.object_mask).collect();
    assert_eq!(contact_recall(&layouts, &masks, 1.0, 2).unwrap(), 1.0);

    let corner: Vec<Layout> = layouts
        .iter()
        .map(|l| Layout::new(0.2, -1.4, -1.4, l.b1, l.b2))
        .collect();
    assert_eq!(contact_recall(&corner, &masks, 1.0, 2).unwrap(), 0.0);
    assert!(matches!(
        contact_recall(&layouts[..2], &masks, 1.0, 2),
        Err(Error::LengthMismatch { .. })
    ));
}

#[test]
fn training_is_bit_reproducible() {
    let data = scenes(40, 1);
    let a = train_on_samples(&data, &small(30), |_, _| {}).unwrap();
    let b = train_on_samples(&data, &small(30), |_, _| {}).unwrap();
    assert_eq!(checkpoint_bytes(&a.params), checkpoint_bytes(&b.params));
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.log.iter().map(|(s, _)| *s).collect::<Vec<_>>(), vec![10, 20, 30]);

    let ev = evaluate(&a.params, &data[..10], &EvalConfig::default()).unwrap();
    let again = evaluate(&a.params, &data[..10], &EvalConfig::default()).unwrap();
    assert_eq!(ev.layouts, again.layouts);
    assert!((0.0..=1.0).contains(&ev.contact_recall));
}

#[test]
fn zero_step_warm_start_returns_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = scenes(20, 2);
    let first = train_on_samples(&data, &small(10), |_, _| {}).unwrap();
    let ckpt = dir.path().join("model.ckpt");
    save_checkpoint(&first.params, &ckpt).unwrap();
    let cfg = TrainConfig {
        init: Some(ckpt),
        ..small(0)
    };
    let resumed = train_on_samples(&data, &cfg, |_, _| {}).unwrap();
    assert_eq!(checkpoint_bytes(&resumed.params), checkpoint_bytes(&first.params));
    assert!(resumed.curve.is_empty());
}

#[test]
fn missing_dataset_is_an_error() {
    let cfg = TrainConfig {
        data: Some("/nonexistent/train.txt".into()),
        ..small(1)
    };
    assert!(train(&cfg, |_, _| {}).is_err());
    assert!(train(&small(1), |_, _| {}).is_err());
    assert!(train_on_samples(&[], &small(1), |_, _| {}).is_err());
}

#[test]
fn default_training_halves_the_loss_by_step_2000() {
    let data = scenes(1200, 0);
    let cfg = TrainConfig {
        steps: 2000,
        ..TrainConfig::default()
    };
    let out = train_on_samples(&data, &cfg, |_, _| {}).unwrap();
    let start = out.curve[0];
    let end = out.smoothed(1999, cfg.log_every).unwrap();
    assert!(end < 0.5 * start, "{start} -> {end}");
}
