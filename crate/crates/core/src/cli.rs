//! Command-line front end.
//!
//! Every subcommand resolves its settings from built-in defaults, then an
//! optional `key = value` file (`--config`), then `--flag value` pairs, and
//! echoes the result to `run.txt` in the output directory. Feeding that
//! `run.txt` back through `--config` reruns the command.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::denoiser::{load_checkpoint, save_checkpoint, Conditioning, DenoiserParams, LossConfig};
use crate::diffusion::{sample_layout, GuidanceSpec, NoiseSchedule, Sampler, ScheduleFamily};
use crate::error::Error;
use crate::geometry::{Layout, TemplateSpec, LAYOUT_DIM};
use crate::gradcheck::{check_network_gradient, random_layout, splat_jacobian_sweep};
use crate::grid::Grid;
use crate::image::read_pgm;
use crate::metrics::{
    ablation_suite, constraint_error, evaluate, format_ablation_table, sampler_moment_check, EvalConfig, MetricsReport,
    LAYOUT_NAMES,
};
use crate::render::{
    compose_overlay, heatmap_guided_sample, interpolate_demo, save_image, scene_consistent_sample, strip,
};
use crate::synth::{
    generate_scenes, heatmap_for_scene, load_sample_dir, read_samples, split_by_instance, write_dataset,
    DatasetManifest, GeneratorConfig, SceneSample,
};
use crate::train::{train, AdamConfig, TrainConfig};

pub const SYNOPSIS: &str = "\
usage: handlayout <subcommand> [--config FILE] [--seed N] [--out DIR] [--flag value ...]

subcommands:
  gen-data      generate a synthetic dataset with an instance-held-out split
                  --n-scenes --n-instances --size --held-out --texture-noise
  train         train the layout denoiser
                  --data --split --steps --batch --lr --init --lambda --mask-loss
                  --conditioning --schedule --schedule-steps --log-every
  sample        sample layouts for a scene        --ckpt --scene --n --sampler --eta
  guide         sample with pinned coordinates    --ckpt --scene --fix x=0.1,y=-0.2 --n
  interpolate   render an interpolation strip     --scene --from --to --k-steps [--ckpt]
  heatmap       sample at heatmap locations       --ckpt --scene --heatmap --sigma --n
  scene         consistent hand size over crops   --ckpt --scenes --widths --hand-size
  eval          contact recall on a split         --ckpt --data --split --n-eval
  ablate        train and compare the three ablation variants
  check-grad    finite-difference gradient checks
  oracle-check  sampler moments under the Gaussian noise oracle

every run writes run.txt (resolved settings) into --out; exit codes: 0 ok, 1 usage, 2 failure
";

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

const SAMPLING: &[(&str, &str)] = &[
    ("ckpt", ""),
    ("sampler", "ddpm"),
    ("eta", "0"),
    ("schedule", "linear"),
    ("schedule_steps", "100"),
    ("png", "false"),
];

const TRAINING: &[(&str, &str)] = &[
    ("data", "data"),
    ("steps", "5000"),
    ("batch", "32"),
    ("lr", "0.001"),
    ("beta1", "0.9"),
    ("beta2", "0.999"),
    ("adam_eps", "1e-8"),
    ("lambda", "10"),
    ("mask_loss", "true"),
    ("mask_res", "32"),
    ("conditioning", "mask-stack"),
    ("schedule", "linear"),
    ("schedule_steps", "100"),
    ("log_every", "100"),
];

const EVALUATION: &[(&str, &str)] = &[
    ("n_eval", "100"),
    ("sampler", "ddpm"),
    ("eta", "0"),
    ("palm_fraction", "1"),
    ("dilation", "2"),
];

/// Settings keys and defaults per subcommand.
fn defaults(cmd: &str) -> Option<Vec<(&'static str, &'static str)>> {
    let mut keys: Vec<(&str, &str)> = match cmd {
        "gen-data" => vec![
            ("n_scenes", "1200"),
            ("n_instances", "20"),
            ("size", "32"),
            ("held_out", "5"),
            ("texture_noise", "0.03"),
        ],
        "train" => {
            let mut k = TRAINING.to_vec();
            k.extend([("split", "train"), ("init", "")]);
            k
        }
        "sample" => {
            let mut k = SAMPLING.to_vec();
            k.extend([("scene", ""), ("n", "4")]);
            k
        }
        "guide" => {
            let mut k = SAMPLING.to_vec();
            k.extend([("scene", ""), ("n", "4"), ("fix", "")]);
            k
        }
        "interpolate" => {
            let mut k = SAMPLING.to_vec();
            k.extend([("scene", ""), ("from", ""), ("to", ""), ("k_steps", "8")]);
            k
        }
        "heatmap" => {
            let mut k = SAMPLING.to_vec();
            k.extend([("scene", ""), ("heatmap", "scene"), ("sigma", "0.1"), ("n", "16")]);
            k
        }
        "scene" => {
            let mut k = SAMPLING.to_vec();
            k.extend([("scenes", ""), ("widths", ""), ("hand_size", "0.1")]);
            k
        }
        "eval" => {
            let mut k = EVALUATION.to_vec();
            k.extend([
                ("ckpt", ""),
                ("data", "data"),
                ("split", "test"),
                ("schedule", "linear"),
                ("schedule_steps", "100"),
            ]);
            k
        }
        "ablate" => {
            let mut k = TRAINING.to_vec();
            k.extend(EVALUATION.iter().copied());
            k.extend([("train_split", "train"), ("test_split", "test")]);
            k
        }
        "check-grad" => vec![
            ("layouts", "100"),
            ("size", "64"),
            ("step", "1e-4"),
            ("net_step", "1e-5"),
        ],
        "oracle-check" => vec![
            ("chains", "10000"),
            ("mu", "3"),
            ("sigma", "0.5"),
            ("schedule", "linear"),
            ("schedule_steps", "100"),
        ],
        _ => return None,
    };
    keys.push(("seed", "0"));
    Some(keys)
}

/// Resolved settings of one invocation.
#[derive(Debug, Clone)]
struct Settings {
    cmd: String,
    values: BTreeMap<String, String>,
    out: PathBuf,
}

impl Settings {
    fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> CliResult<T> {
        let v = self.raw(key);
        v.parse().or_else(|_| {
            usage(format!(
                "--{} expects a value of the right type, got {v:?}",
                flag_name(key)
            ))
        })
    }

    fn required(&self, key: &str) -> CliResult<&str> {
        match self.raw(key) {
            "" => usage(format!("--{} is required for {}", flag_name(key), self.cmd)),
            v => Ok(v),
        }
    }

    fn path(&self, key: &str) -> CliResult<PathBuf> {
        Ok(PathBuf::from(self.required(key)?))
    }

    fn seed(&self) -> CliResult<u64> {
        self.parse("seed")
    }

    fn sampler(&self) -> CliResult<Sampler> {
        match self.raw("sampler") {
            "ddpm" => Ok(Sampler::Ddpm),
            "ddim" => {
                let eta: f64 = self.parse("eta")?;
                if !(0.0..=1.0).contains(&eta) {
                    return usage(format!("--eta must lie in [0, 1], got {eta}"));
                }
                Ok(Sampler::Ddim { eta })
            }
            other => usage(format!("--sampler must be ddpm or ddim, got {other:?}")),
        }
    }

    fn schedule(&self) -> CliResult<NoiseSchedule> {
        let family: ScheduleFamily = self.raw("schedule").parse().or_else(|e: Error| usage(e.to_string()))?;
        Ok(NoiseSchedule::build(self.parse("schedule_steps")?, family)?)
    }

    fn png(&self) -> CliResult<bool> {
        self.parse("png")
    }

    fn echo(&self) -> String {
        let mut out = format!("# handlayout {}\n", self.cmd);
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn parse_config_file(path: &Path, known: &BTreeMap<String, String>) -> CliResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return usage(format!("{}:{}: expected key = value", path.display(), n + 1));
        };
        let key = k.trim().replace('-', "_");
        if !known.contains_key(&key) {
            return usage(format!("{}:{}: unknown key {key:?}", path.display(), n + 1));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn resolve(args: &[String]) -> CliResult<Settings> {
    let Some(cmd) = args.first() else {
        return usage("missing subcommand");
    };
    let Some(keys) = defaults(cmd) else {
        return usage(format!("unknown subcommand {cmd:?}"));
    };
    let mut values: BTreeMap<String, String> = keys.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    let mut flags = Vec::new();
    let mut config = None;
    let mut out = PathBuf::from("out");
    let mut rest = args[1..].iter();
    while let Some(arg) = rest.next() {
        let Some(name) = arg.strip_prefix("--") else {
            return usage(format!("unexpected argument {arg:?}"));
        };
        let (name, value) = match name.split_once('=') {
            Some((n, v)) => (n.to_string(), v.to_string()),
            None => match rest.next() {
                Some(v) => (name.to_string(), v.clone()),
                None => return usage(format!("--{name} needs a value")),
            },
        };
        let key = name.replace('-', "_");
        match key.as_str() {
            "config" => config = Some(PathBuf::from(value)),
            "out" => out = PathBuf::from(value),
            _ if values.contains_key(&key) => flags.push((key, value)),
            _ => return usage(format!("unknown flag --{name} for {cmd}")),
        }
    }
    if let Some(path) = config {
        for (k, v) in parse_config_file(&path, &values)? {
            values.insert(k, v);
        }
    }
    for (k, v) in flags {
        values.insert(k, v);
    }
    Ok(Settings {
        cmd: cmd.clone(),
        values,
        out,
    })
}

/// Runs one invocation and returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let outcome = resolve(&args).and_then(|settings| {
        let fresh = !settings.out.exists();
        fs::create_dir_all(&settings.out).map_err(|e| Error::io(&settings.out, e))?;
        let run_txt = settings.out.join("run.txt");
        fs::write(&run_txt, settings.echo()).map_err(|e| Error::io(&run_txt, e))?;
        let result = dispatch(&settings);
        // a malformed value is only seen once the subcommand parses it
        if let Err(CliError::Usage(_)) = result {
            let _ = fs::remove_file(&run_txt);
            if fresh {
                let _ = fs::remove_dir(&settings.out);
            }
        }
        result
    });
    match outcome {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{SYNOPSIS}");
            1
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(s: &Settings) -> CliResult<()> {
    match s.cmd.as_str() {
        "gen-data" => cmd_gen_data(s),
        "train" => cmd_train(s),
        "sample" => cmd_sample(s),
        "guide" => cmd_guide(s),
        "interpolate" => cmd_interpolate(s),
        "heatmap" => cmd_heatmap(s),
        "scene" => cmd_scene(s),
        "eval" => cmd_eval(s),
        "ablate" => cmd_ablate(s),
        "check-grad" => cmd_check_grad(s),
        "oracle-check" => cmd_oracle_check(s),
        other => usage(format!("unknown subcommand {other:?}")),
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Runtime(Error::io(path, e)))
}

fn layouts_text(layouts: &[Layout]) -> String {
    layouts.iter().map(|l| l.to_line() + "\n").collect()
}

/// Overlay of the drawable layouts; samples outside the accepted center
/// range are left out of the picture but kept in `layouts.txt`.
fn overlay(scene: &Grid, layouts: &[Layout]) -> CliResult<Grid> {
    let drawable: Vec<Layout> = layouts.iter().copied().filter(|l| l.validate().is_ok()).collect();
    if drawable.len() < layouts.len() {
        eprintln!(
            "note: {} of {} layouts not drawn",
            layouts.len() - drawable.len(),
            layouts.len()
        );
    }
    Ok(compose_overlay(scene, &drawable, &TemplateSpec::default())?)
}

/// A sample directory, or a bare object image.
struct Scene {
    object: Grid,
    sample: Option<SceneSample>,
}

fn load_scene(path: &Path) -> CliResult<Scene> {
    if path.is_dir() {
        let sample = load_sample_dir(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        Ok(Scene {
            object: sample.object_grid.clone(),
            sample: Some(sample),
        })
    } else {
        Ok(Scene {
            object: read_pgm(path)?,
            sample: None,
        })
    }
}

fn load_model(s: &Settings) -> CliResult<DenoiserParams> {
    Ok(load_checkpoint(&s.path("ckpt")?)?)
}

fn check_scene_size(params: &DenoiserParams, scene: &Grid) -> CliResult<()> {
    let n = params.config().grid;
    if scene.width() != n || scene.height() != n {
        return Err(CliError::Runtime(Error::DimensionMismatch {
            want_w: n,
            want_h: n,
            found_w: scene.width(),
            found_h: scene.height(),
        }));
    }
    Ok(())
}

fn cmd_gen_data(s: &Settings) -> CliResult<()> {
    let cfg = GeneratorConfig {
        size: s.parse("size")?,
        n_instances: s.parse("n_instances")?,
        texture_noise: s.parse("texture_noise")?,
        ..GeneratorConfig::default()
    };
    let seed = s.seed()?;
    let scenes = generate_scenes(&cfg, s.parse("n_scenes")?, seed)?;
    let manifest = write_dataset(&scenes, &s.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, test) = split_by_instance(&manifest, s.parse("held_out")?, &mut rng)?;
    train.save("train.txt")?;
    test.save("test.txt")?;
    println!(
        "wrote {} scenes ({} train, {} test) to {}",
        manifest.len(),
        train.len(),
        test.len(),
        s.out.display()
    );
    Ok(())
}

fn split_manifest(s: &Settings, split_key: &str) -> CliResult<PathBuf> {
    let root = s.path("data")?;
    Ok(root.join(format!("{}.txt", s.required(split_key)?)))
}

fn train_config(s: &Settings, data: PathBuf) -> CliResult<TrainConfig> {
    let conditioning: Conditioning = s.raw("conditioning").parse().or_else(|e: Error| usage(e.to_string()))?;
    let family: ScheduleFamily = s.raw("schedule").parse().or_else(|e: Error| usage(e.to_string()))?;
    let mut cfg = TrainConfig {
        steps: s.parse("steps")?,
        batch: s.parse("batch")?,
        adam: AdamConfig {
            lr: s.parse("lr")?,
            beta1: s.parse("beta1")?,
            beta2: s.parse("beta2")?,
            eps: s.parse("adam_eps")?,
        },
        seed: s.seed()?,
        loss: LossConfig {
            lambda: s.parse("lambda")?,
            mask_res: s.parse("mask_res")?,
            mask_loss: s.parse("mask_loss")?,
        },
        schedule_steps: s.parse("schedule_steps")?,
        schedule: family,
        data: Some(data),
        log_every: s.parse("log_every")?,
        ..TrainConfig::default()
    };
    cfg.denoiser.conditioning = conditioning;
    if let Some(init) = s.values.get("init").filter(|v| !v.is_empty()) {
        cfg.init = Some(PathBuf::from(init));
    }
    cfg.validate().or_else(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_train(s: &Settings) -> CliResult<()> {
    let cfg = train_config(s, split_manifest(s, "split")?)?;
    let outcome = train(&cfg, |step, loss| println!("step {step:>6}  loss {loss:.6}"))?;
    save_checkpoint(&outcome.params, &s.out.join("model.ckpt"))?;
    let report = MetricsReport {
        loss_curve: outcome.log.clone(),
        sample_count: cfg.steps * cfg.batch,
        config: cfg.echo(),
        ..MetricsReport::default()
    };
    write_text(&s.out.join("metrics.txt"), &report.to_text())?;
    let losses: String = outcome
        .curve
        .iter()
        .enumerate()
        .map(|(k, l)| format!("{} {l:.17e}\n", k + 1))
        .collect();
    write_text(&s.out.join("loss.txt"), &losses)
}

fn sample_many(
    s: &Settings,
    params: &DenoiserParams,
    object: &Grid,
    n: usize,
    guidance: Option<&GuidanceSpec>,
) -> CliResult<Vec<Layout>> {
    let template = TemplateSpec::default();
    let sched = s.schedule()?;
    let sampler = s.sampler()?;
    let model = params.conditioned(object, &template);
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed()?);
    Ok((0..n)
        .map(|_| sample_layout(&model, &sched, sampler, guidance, &mut rng))
        .collect::<crate::Result<_>>()?)
}

fn cmd_sample(s: &Settings) -> CliResult<()> {
    let params = load_model(s)?;
    let scene = load_scene(&s.path("scene")?)?;
    check_scene_size(&params, &scene.object)?;
    let layouts = sample_many(s, &params, &scene.object, s.parse("n")?, None)?;
    write_text(&s.out.join("layouts.txt"), &layouts_text(&layouts))?;
    let overlay = overlay(&scene.object, &layouts)?;
    save_image(&overlay, &s.out.join("overlay.pgm"), s.png()?)?;
    print!("{}", layouts_text(&layouts));
    Ok(())
}

/// Parses `x=0.1,y=-0.2` into a guidance spec over the named coordinates.
fn parse_fix(spec: &str) -> CliResult<GuidanceSpec> {
    let mut mask = [false; LAYOUT_DIM];
    let mut target = [0.0; LAYOUT_DIM];
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let Some((name, value)) = part.split_once('=') else {
            return usage(format!("--fix entries look like name=value, got {part:?}"));
        };
        let Some(k) = LAYOUT_NAMES.iter().position(|n| *n == name.trim()) else {
            return usage(format!("--fix: unknown coordinate {name:?} (use a, x, y, b1, b2)"));
        };
        if mask[k] {
            return usage(format!("--fix: {name} given twice"));
        }
        let v: f64 = value
            .trim()
            .parse()
            .or_else(|_| usage(format!("--fix: bad number {value:?}")))?;
        mask[k] = true;
        target[k] = v;
    }
    if !mask.iter().any(|&m| m) {
        return usage("--fix names no coordinates");
    }
    GuidanceSpec::new(mask, target).or_else(|e| usage(e.to_string()))
}

fn cmd_guide(s: &Settings) -> CliResult<()> {
    let spec = parse_fix(s.required("fix")?)?;
    let params = load_model(s)?;
    let scene = load_scene(&s.path("scene")?)?;
    check_scene_size(&params, &scene.object)?;
    let layouts = sample_many(s, &params, &scene.object, s.parse("n")?, Some(&spec))?;
    let err = constraint_error(&layouts, &vec![spec; layouts.len()])?;
    write_text(&s.out.join("layouts.txt"), &layouts_text(&layouts))?;
    let report = MetricsReport {
        constraint_mae: Some(err.per_dim),
        sample_count: layouts.len(),
        config: s.values.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        ..MetricsReport::default()
    };
    write_text(&s.out.join("metrics.txt"), &report.to_text())?;
    let overlay = overlay(&scene.object, &layouts)?;
    save_image(&overlay, &s.out.join("overlay.pgm"), s.png()?)?;
    print!("{}", layouts_text(&layouts));
    println!("max constraint error {:.3e}", err.max);
    Ok(())
}

fn parse_layout_flag(s: &Settings, key: &str) -> CliResult<Option<Layout>> {
    match s.raw(key) {
        "" => Ok(None),
        v => v.parse().map(Some).or_else(|e: Error| usage(format!("--{key}: {e}"))),
    }
}

fn cmd_interpolate(s: &Settings) -> CliResult<()> {
    let scene = load_scene(&s.path("scene")?)?;
    let (from, to) = (parse_layout_flag(s, "from")?, parse_layout_flag(s, "to")?);
    let (l_a, l_b) = match (from, to) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            if s.raw("ckpt").is_empty() {
                return usage("interpolate needs --from and --to, or --ckpt to sample missing endpoints");
            }
            let params = load_model(s)?;
            check_scene_size(&params, &scene.object)?;
            let drawn = sample_many(s, &params, &scene.object, 2, None)?;
            (from.unwrap_or(drawn[0]), to.unwrap_or(drawn[1]))
        }
    };
    let (layouts, frames) = interpolate_demo(&scene.object, &l_a, &l_b, s.parse("k_steps")?, &TemplateSpec::default())?;
    let png = s.png()?;
    for (k, f) in frames.iter().enumerate() {
        save_image(f, &s.out.join(format!("frame_{k:03}.pgm")), png)?;
    }
    save_image(&strip(&frames)?, &s.out.join("strip.pgm"), png)?;
    write_text(&s.out.join("layouts.txt"), &layouts_text(&layouts))?;
    println!("wrote {} frames", frames.len());
    Ok(())
}

fn cmd_heatmap(s: &Settings) -> CliResult<()> {
    let params = load_model(s)?;
    let scene = load_scene(&s.path("scene")?)?;
    check_scene_size(&params, &scene.object)?;
    let (w, h) = (scene.object.width(), scene.object.height());
    let heatmap = match s.raw("heatmap") {
        "scene" => match &scene.sample {
            Some(sample) => heatmap_for_scene(sample, s.parse("sigma")?),
            None => return usage("--heatmap scene needs --scene to be a sample directory"),
        },
        "uniform" => Grid::filled(w, h, 1.0 / (w * h) as f64),
        path => read_pgm(Path::new(path))?,
    };
    heatmap.same_shape(&scene.object)?;
    let template = TemplateSpec::default();
    let model = params.conditioned(&scene.object, &template);
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed()?);
    let out = heatmap_guided_sample(&model, &heatmap, s.parse("n")?, &s.schedule()?, s.sampler()?, &mut rng)?;
    let specs: Vec<GuidanceSpec> = out
        .points
        .iter()
        .map(|&p| crate::render::location_guidance(p))
        .collect::<crate::Result<_>>()?;
    let err = constraint_error(&out.layouts, &specs)?;
    let points: String = out
        .points
        .iter()
        .map(|p| format!("{:.17e} {:.17e}\n", p[0], p[1]))
        .collect();
    write_text(&s.out.join("points.txt"), &points)?;
    write_text(&s.out.join("layouts.txt"), &layouts_text(&out.layouts))?;
    let peak = heatmap.max();
    let shown = Grid::from_values(w, h, heatmap.values().iter().map(|v| v / peak).collect())?;
    let png = s.png()?;
    save_image(&shown, &s.out.join("heatmap.pgm"), png)?;
    save_image(&overlay(&scene.object, &out.layouts)?, &s.out.join("overlay.pgm"), png)?;
    println!("{} layouts, max location error {:.3e}", out.layouts.len(), err.max);
    Ok(())
}

fn comma_list(s: &Settings, key: &str) -> CliResult<Vec<String>> {
    Ok(s.required(key)?.split(',').map(|p| p.trim().to_string()).collect())
}

fn cmd_scene(s: &Settings) -> CliResult<()> {
    let params = load_model(s)?;
    let scenes: Vec<Scene> = comma_list(s, "scenes")?
        .iter()
        .map(|p| load_scene(Path::new(p)))
        .collect::<CliResult<_>>()?;
    let widths: Vec<f64> = comma_list(s, "widths")?
        .iter()
        .map(|w| w.parse().or_else(|_| usage(format!("--widths: bad number {w:?}"))))
        .collect::<CliResult<_>>()?;
    if widths.len() != scenes.len() {
        return usage(format!("{} scenes but {} widths", scenes.len(), widths.len()));
    }
    for sc in &scenes {
        check_scene_size(&params, &sc.object)?;
    }
    let shared: f64 = s.parse("hand_size")?;
    let template = TemplateSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed()?);
    let layouts = scene_consistent_sample(
        &widths,
        shared,
        |i| params.conditioned(&scenes[i].object, &template),
        &s.schedule()?,
        s.sampler()?,
        &mut rng,
    )?;
    let mut text = String::new();
    let png = s.png()?;
    for (i, (l, w)) in layouts.iter().zip(&widths).enumerate() {
        text.push_str(&format!(
            "crop {i} width {w} relative_size {:.17e} absolute_size {:.17e} layout {}\n",
            l.scale(),
            l.scale() * w,
            l.to_line()
        ));
        let overlay = overlay(&scenes[i].object, std::slice::from_ref(l))?;
        save_image(&overlay, &s.out.join(format!("overlay_{i:02}.pgm")), png)?;
    }
    write_text(&s.out.join("layouts.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn eval_config(s: &Settings) -> CliResult<EvalConfig> {
    let family: ScheduleFamily = s.raw("schedule").parse().or_else(|e: Error| usage(e.to_string()))?;
    Ok(EvalConfig {
        sampler: s.sampler()?,
        schedule_steps: s.parse("schedule_steps")?,
        schedule: family,
        palm_fraction: s.parse("palm_fraction")?,
        dilation_px: s.parse("dilation")?,
        seed: s.seed()?,
        ..EvalConfig::default()
    })
}

fn load_split(path: &Path, n: usize) -> CliResult<Vec<SceneSample>> {
    let mut manifest = DatasetManifest::load(path)?;
    manifest.records.truncate(n);
    Ok(read_samples(&manifest)?)
}

fn cmd_eval(s: &Settings) -> CliResult<()> {
    let params = load_model(s)?;
    let scenes = load_split(&split_manifest(s, "split")?, s.parse("n_eval")?)?;
    let ev = evaluate(&params, &scenes, &eval_config(s)?)?;
    let report = MetricsReport {
        contact_recall: Some(ev.contact_recall),
        sample_count: scenes.len(),
        config: s.values.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        ..MetricsReport::default()
    };
    write_text(&s.out.join("metrics.txt"), &report.to_text())?;
    write_text(&s.out.join("layouts.txt"), &layouts_text(&ev.layouts))?;
    println!("contact_recall = {}", ev.contact_recall);
    Ok(())
}

fn cmd_ablate(s: &Settings) -> CliResult<()> {
    let train_path = split_manifest(s, "train_split")?;
    let cfg = train_config(s, train_path.clone())?;
    let train_set = read_samples(&DatasetManifest::load(&train_path)?)?;
    let test_set = load_split(&split_manifest(s, "test_split")?, s.parse("n_eval")?)?;
    let runs = ablation_suite(&cfg, &train_set, &test_set, &eval_config(s)?)?;
    let rows: Vec<_> = runs.into_iter().map(|r| r.row).collect();
    let table = format_ablation_table(&rows);
    write_text(&s.out.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_check_grad(s: &Settings) -> CliResult<()> {
    let template = TemplateSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed()?);
    let size: usize = s.parse("size")?;
    let splat = splat_jacobian_sweep(s.parse("layouts")?, size, s.parse("step")?, &template, &mut rng)?;

    let cfg = crate::denoiser::DenoiserConfig::tiny();
    let params = DenoiserParams::init(cfg, &mut rng)?;
    let loss_cfg = LossConfig {
        mask_res: 16,
        ..LossConfig::default()
    };
    let batch = (0..2)
        .map(|_| {
            let object = Grid::from_fn(cfg.grid, cfg.grid, |_, _| rand::Rng::random::<f64>(&mut rng));
            crate::denoiser::TrainingItem::new(object, random_layout(&mut rng).to_array(), loss_cfg.mask_res, &template)
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let sched = NoiseSchedule::build(100, ScheduleFamily::Linear)?;
    let net = check_network_gradient(
        &params,
        &batch,
        &loss_cfg,
        &template,
        &sched,
        s.seed()?,
        s.parse("net_step")?,
    )?;
    let pass = splat.max_rel_error < 1e-3 && net.max_rel_error < 1e-4;
    let text = format!(
        "splat_jacobian_max_rel_error = {:.6e}\nsplat_jacobian_worst_coord = {}\nnetwork_max_rel_error = {:.6e}\nnetwork_params_checked = {}\npass = {pass}\n",
        splat.max_rel_error, splat.worst_coord, net.max_rel_error, net.params_checked
    );
    write_text(&s.out.join("report.txt"), &text)?;
    print!("{text}");
    if pass {
        Ok(())
    } else {
        Err(CliError::Runtime(Error::Config("gradient check failed".into())))
    }
}

fn cmd_oracle_check(s: &Settings) -> CliResult<()> {
    let sched = s.schedule()?;
    let (mu, sigma): (f64, f64) = (s.parse("mu")?, s.parse("sigma")?);
    let chains = s.parse("chains")?;
    let mut text = String::new();
    let mut pass = true;
    for sampler in [Sampler::Ddpm, Sampler::Ddim { eta: 1.0 }] {
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed()?);
        let r = sampler_moment_check(&sched, sampler, mu, sigma, chains, &mut rng)?;
        pass &= r.passed();
        text.push_str(&format!(
            "{} mean = {:.6} std = {:.6} pass = {}\n",
            sampler.label(),
            r.mean,
            r.std,
            r.passed()
        ));
    }
    write_text(&s.out.join("report.txt"), &text)?;
    print!("{text}");
    if pass {
        Ok(())
    } else {
        Err(CliError::Runtime(Error::Config(
            "sampler moments outside tolerance".into(),
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn flags_override_defaults_and_unknown_flags_fail() {
        let s = resolve(&args(&["sample", "--n", "7", "--sampler=ddim", "--out", "x"])).unwrap();
        assert_eq!(s.raw("n"), "7");
        assert_eq!(s.raw("sampler"), "ddim");
        assert_eq!(s.out, PathBuf::from("x"));
        assert!(!s.values.contains_key("out"));
        assert!(matches!(
            resolve(&args(&["sample", "--steps", "3"])),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(resolve(&args(&["sample", "--n"])), Err(CliError::Usage(_))));
        assert!(matches!(resolve(&args(&["frobnicate"])), Err(CliError::Usage(_))));
        assert!(matches!(resolve(&args(&[])), Err(CliError::Usage(_))));
    }

    #[test]
    fn fix_parsing() {
        let g = parse_fix("x=0.1, y=-0.2,a=0.3").unwrap();
        assert_eq!(g.mask, [true, true, true, false, false]);
        assert_eq!(g.target, [0.3, 0.1, -0.2, 0.0, 0.0]);
        assert!(parse_fix("z=1").is_err());
        assert!(parse_fix("x=1,x=2").is_err());
        assert!(parse_fix("x").is_err());
        assert!(parse_fix("").is_err());
    }

    #[test]
    fn config_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        fs::write(&cfg, "# comment\nn = 3\nsampler = ddim # trailing\n").unwrap();
        let c = cfg.to_str().unwrap();
        let s = resolve(&args(&["sample", "--config", c, "--n", "5"])).unwrap();
        assert_eq!(s.raw("n"), "5");
        assert_eq!(s.raw("sampler"), "ddim");
        fs::write(&cfg, "bogus = 1\n").unwrap();
        assert!(matches!(
            resolve(&args(&["sample", "--config", c])),
            Err(CliError::Usage(_))
        ));
    }
}
