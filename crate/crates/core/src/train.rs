//! Adam and the training loop.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::denoiser::{load_checkpoint, total_loss, DenoiserConfig, DenoiserParams, LossConfig, TrainingItem};
use crate::diffusion::{NoiseSchedule, ScheduleFamily};
use crate::error::{Error, Result};
use crate::geometry::TemplateSpec;
use crate::synth::{read_samples, DatasetManifest, SceneSample};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient
/// entry is non-finite.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, hp: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(k));
    }
    state.step += 1;
    let c1 = 1.0 - hp.beta1.powi(state.step as i32);
    let c2 = 1.0 - hp.beta2.powi(state.step as i32);
    for k in 0..params.len() {
        let g = grads[k];
        state.m[k] = hp.beta1 * state.m[k] + (1.0 - hp.beta1) * g;
        state.v[k] = hp.beta2 * state.v[k] + (1.0 - hp.beta2) * g * g;
        let m_hat = state.m[k] / c1;
        let v_hat = state.v[k] / c2;
        params[k] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

/// Loss above which training is aborted.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub loss: LossConfig,
    pub schedule_steps: usize,
    pub schedule: ScheduleFamily,
    pub denoiser: DenoiserConfig,
    pub template: TemplateSpec,
    /// Manifest of the training split.
    pub data: Option<PathBuf>,
    /// Warm-start checkpoint.
    pub init: Option<PathBuf>,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch: 32,
            adam: AdamConfig::default(),
            seed: 0,
            loss: LossConfig::default(),
            schedule_steps: 100,
            schedule: ScheduleFamily::Linear,
            denoiser: DenoiserConfig::default(),
            template: TemplateSpec::default(),
            data: None,
            init: None,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.eps > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return bad(format!("bad optimizer settings {a:?}"));
        }
        self.denoiser.validate()?;
        self.template.validate()
    }

    pub fn echo(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![
            ("steps".into(), self.steps.to_string()),
            ("batch".into(), self.batch.to_string()),
            ("lr".into(), self.adam.lr.to_string()),
            ("beta1".into(), self.adam.beta1.to_string()),
            ("beta2".into(), self.adam.beta2.to_string()),
            ("adam_eps".into(), self.adam.eps.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("lambda".into(), self.loss.lambda.to_string()),
            ("mask_res".into(), self.loss.mask_res.to_string()),
            ("mask_loss".into(), self.loss.mask_loss.to_string()),
            ("schedule_steps".into(), self.schedule_steps.to_string()),
            ("schedule".into(), self.schedule.name().into()),
        ];
        out.extend(self.denoiser.echo().into_iter().map(|(k, v)| (k.to_string(), v)));
        if let Some(p) = &self.init {
            out.push(("init".into(), p.display().to_string()));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DenoiserParams,
    /// Batch loss at every step.
    pub curve: Vec<f64>,
    /// `(step, mean loss over the preceding window)` every `log_every` steps.
    pub log: Vec<(usize, f64)>,
}

impl TrainOutcome {
    /// Mean of `curve` over `window` steps ending at `step`.
    pub fn smoothed(&self, step: usize, window: usize) -> Option<f64> {
        smoothed(&self.curve, step, window)
    }
}

pub fn smoothed(curve: &[f64], step: usize, window: usize) -> Option<f64> {
    if step >= curve.len() || window == 0 {
        return None;
    }
    let lo = (step + 1).saturating_sub(window);
    let part = &curve[lo..=step];
    Some(part.iter().sum::<f64>() / part.len() as f64)
}

pub fn training_items(samples: &[SceneSample], cfg: &TrainConfig) -> Result<Vec<TrainingItem>> {
    samples
        .iter()
        .map(|s| {
            TrainingItem::new(
                s.object_grid.clone(),
                s.gt_layout.to_array(),
                cfg.loss.mask_res,
                &cfg.template,
            )
        })
        .collect()
}

/// Trains on in-memory samples. With `cfg.init` set, training resumes from
/// that checkpoint (its architecture wins over `cfg.denoiser`).
pub fn train_on_samples<F>(samples: &[SceneSample], cfg: &TrainConfig, mut on_log: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, f64),
{
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    let sched = NoiseSchedule::build(cfg.schedule_steps, cfg.schedule)?;
    let items = training_items(samples, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = match &cfg.init {
        Some(path) => load_checkpoint(path)?,
        None => DenoiserParams::init(cfg.denoiser, &mut rng)?,
    };
    let n = params.config().grid;
    if let Some(s) = samples
        .iter()
        .find(|s| s.object_grid.width() != n || s.object_grid.height() != n)
    {
        return Err(Error::DimensionMismatch {
            want_w: n,
            want_h: n,
            found_w: s.object_grid.width(),
            found_h: s.object_grid.height(),
        });
    }
    let mut state = AdamState::new(params.len());
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut log = Vec::new();
    let mut batch = Vec::with_capacity(cfg.batch);
    for step in 0..cfg.steps {
        batch.clear();
        for _ in 0..cfg.batch {
            batch.push(items[rng.random_range(0..items.len())].clone());
        }
        let (loss, grads) = total_loss(&batch, &params, &cfg.loss, &cfg.template, &sched, &mut rng)?;
        if !(loss.total <= DIVERGENCE_LOSS) {
            return Err(Error::Diverged { step, loss: loss.total });
        }
        adam_step(params.values_mut(), &grads.values, &mut state, &cfg.adam)?;
        curve.push(loss.total);
        if (step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps {
            let mean = smoothed(&curve, step, cfg.log_every).expect("step within curve");
            log.push((step + 1, mean));
            on_log(step + 1, mean);
        }
    }
    Ok(TrainOutcome { params, curve, log })
}

/// Trains on the split listed in `cfg.data`.
pub fn train<F: FnMut(usize, f64)>(cfg: &TrainConfig, on_log: F) -> Result<TrainOutcome> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("no training data given".into()))?;
    let manifest = DatasetManifest::load(path)?;
    let samples = read_samples(&manifest)?;
    train_on_samples(&samples, cfg, on_log)
}
