//! Evaluation: contact recall, guidance constraint error, the closed-form
//! Gaussian noise oracle and the ablation table.

use std::borrow::Borrow;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};

use crate::denoiser::{Conditioning, DenoiserParams};
use crate::diffusion::{
    normal_vec, run_reverse_chain, sample_layout, GuidanceSpec, NoiseSchedule, Sampler, ScheduleFamily,
};
use crate::error::{Error, Result};
use crate::geometry::{Layout, TemplateSpec, LAYOUT_DIM};
use crate::grid::{pixel_center, Grid};
use crate::synth::SceneSample;
use crate::train::{train_on_samples, TrainConfig};

pub const DEFAULT_PALM_FRACTION: f64 = 1.0;
pub const DEFAULT_DILATION_PX: usize = 2;
pub const LAYOUT_NAMES: [&str; LAYOUT_DIM] = ["a", "x", "y", "b1", "b2"];

/// Binary dilation by a Euclidean disk of `px` pixels.
pub fn dilate(mask: &Grid, px: usize) -> Grid {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let r = px as isize;
    Grid::from_fn(mask.width(), mask.height(), |i, j| {
        for dj in -r..=r {
            for di in -r..=r {
                if di * di + dj * dj > r * r {
                    continue;
                }
                let (ii, jj) = (i as isize + di, j as isize + dj);
                if ii >= 0 && jj >= 0 && ii < w && jj < h && mask.get(ii as usize, jj as usize) > 0.0 {
                    return 1.0;
                }
            }
        }
        0.0
    })
}

/// True when the palm disk (radius `palm_fraction·a²`) touches any pixel
/// square of the already dilated mask.
pub fn palm_touches(l: &Layout, dilated: &Grid, palm_fraction: f64) -> bool {
    let r = palm_fraction * l.scale();
    let (w, h) = (dilated.width(), dilated.height());
    let (hx, hy) = (1.0 / w as f64, 1.0 / h as f64);
    for j in 0..h {
        for i in 0..w {
            if dilated.get(i, j) <= 0.0 {
                continue;
            }
            let c = pixel_center(i, j, w, h);
            let dx = ((l.x - c[0]).abs() - hx).max(0.0);
            let dy = ((l.y - c[1]).abs() - hy).max(0.0);
            if dx.hypot(dy) <= r {
                return true;
            }
        }
    }
    false
}

/// Fraction of layouts whose palm disk meets the object mask dilated by
/// `dilation_px`.
pub fn contact_recall<M: Borrow<Grid>>(
    layouts: &[Layout],
    masks: &[M],
    palm_fraction: f64,
    dilation_px: usize,
) -> Result<f64> {
    if layouts.len() != masks.len() {
        return Err(Error::LengthMismatch(layouts.len(), masks.len()));
    }
    if layouts.is_empty() {
        return Err(Error::UndefinedMetric);
    }
    let hits = layouts
        .iter()
        .zip(masks)
        .filter(|(l, m)| palm_touches(l, &dilate((*m).borrow(), dilation_px), palm_fraction))
        .count();
    Ok(hits as f64 / layouts.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintError {
    /// Mean absolute error per coordinate, over the samples constraining it.
    pub per_dim: [Option<f64>; LAYOUT_DIM],
    /// Mean over every constrained entry.
    pub overall: f64,
    /// Largest single deviation.
    pub max: f64,
}

pub fn constraint_error(layouts: &[Layout], specs: &[GuidanceSpec]) -> Result<ConstraintError> {
    if layouts.len() != specs.len() {
        return Err(Error::LengthMismatch(layouts.len(), specs.len()));
    }
    let mut sum = [0.0; LAYOUT_DIM];
    let mut count = [0usize; LAYOUT_DIM];
    let mut max = 0.0f64;
    for (l, spec) in layouts.iter().zip(specs) {
        let v = l.to_array();
        for k in 0..LAYOUT_DIM {
            if spec.mask[k] {
                let e = (v[k] - spec.target[k]).abs();
                sum[k] += e;
                count[k] += 1;
                max = max.max(e);
            }
        }
    }
    let total: usize = count.iter().sum();
    if total == 0 {
        return Err(Error::UndefinedMetric);
    }
    Ok(ConstraintError {
        per_dim: std::array::from_fn(|k| (count[k] > 0).then(|| sum[k] / count[k] as f64)),
        overall: sum.iter().sum::<f64>() / total as f64,
        max,
    })
}

/// `(slope, offset)` with `E[ε | x_t] = slope·x_t + offset` for data
/// `x₀ ~ N(mu, sigma²)`.
pub fn oracle_coefficients(t: usize, mu: f64, sigma: f64, sched: &NoiseSchedule) -> (f64, f64) {
    let (sc, nc) = (sched.signal_coef(t), sched.noise_coef(t));
    let denom = sc * sc * sigma * sigma + nc * nc;
    if denom == 0.0 {
        return (0.0, 0.0);
    }
    let slope = nc / denom;
    (slope, -slope * sc * mu)
}

/// Posterior-mean noise prediction for Gaussian data.
pub fn gaussian_oracle_epsilon(x_t: f64, t: usize, mu: f64, sigma: f64, sched: &NoiseSchedule) -> f64 {
    let (slope, _) = oracle_coefficients(t, mu, sigma, sched);
    slope * (x_t - sched.signal_coef(t) * mu)
}

pub const MOMENT_MEAN_TOL: f64 = 0.02;
pub const MOMENT_STD_REL_TOL: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentReport {
    pub n_chains: usize,
    pub mean: f64,
    pub std: f64,
    pub target_mu: f64,
    pub target_sigma: f64,
}

impl MomentReport {
    pub fn mean_ok(&self) -> bool {
        (self.mean - self.target_mu).abs() <= MOMENT_MEAN_TOL
    }

    pub fn std_ok(&self) -> bool {
        (self.std - self.target_sigma).abs() <= MOMENT_STD_REL_TOL * self.target_sigma
    }

    pub fn passed(&self) -> bool {
        self.mean_ok() && self.std_ok()
    }
}

/// Runs `n_chains` scalar reverse chains with the Gaussian oracle as the
/// denoiser and reports the sample moments.
pub fn sampler_moment_check<R: Rng + ?Sized>(
    sched: &NoiseSchedule,
    sampler: Sampler,
    mu: f64,
    sigma: f64,
    n_chains: usize,
    rng: &mut R,
) -> Result<MomentReport> {
    if n_chains < 1000 {
        return Err(Error::Config(format!("need at least 1000 chains, got {n_chains}")));
    }
    let mut xs = Vec::with_capacity(n_chains);
    for _ in 0..n_chains {
        let x_big_t = normal_vec::<1, _>(rng);
        let x = run_reverse_chain(
            x_big_t,
            sched,
            sampler,
            None,
            |x, t| Ok([gaussian_oracle_epsilon(x[0], t, mu, sigma, sched)]),
            rng,
        )?;
        xs.push(x[0]);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(MomentReport {
        n_chains,
        mean,
        std: var.sqrt(),
        target_mu: mu,
        target_sigma: sigma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub sampler: Sampler,
    pub schedule_steps: usize,
    pub schedule: ScheduleFamily,
    pub template: TemplateSpec,
    pub palm_fraction: f64,
    pub dilation_px: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sampler: Sampler::Ddpm,
            schedule_steps: 100,
            schedule: ScheduleFamily::Linear,
            template: TemplateSpec::default(),
            palm_fraction: DEFAULT_PALM_FRACTION,
            dilation_px: DEFAULT_DILATION_PX,
            seed: 0,
        }
    }
}

/// One unguided sample per scene; scene `k` uses stream `k` of the seed.
pub fn sample_for_scenes(params: &DenoiserParams, scenes: &[SceneSample], cfg: &EvalConfig) -> Result<Vec<Layout>> {
    let sched = NoiseSchedule::build(cfg.schedule_steps, cfg.schedule)?;
    scenes
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(k as u64);
            let model = params.conditioned(&s.object_grid, &cfg.template);
            sample_layout(&model, &sched, cfg.sampler, None, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub layouts: Vec<Layout>,
    pub contact_recall: f64,
}

pub fn evaluate(params: &DenoiserParams, scenes: &[SceneSample], cfg: &EvalConfig) -> Result<Evaluation> {
    let layouts = sample_for_scenes(params, scenes, cfg)?;
    let masks: Vec<&Grid> = scenes.iter().map(|s| &s.object_mask).collect();
    let contact_recall = contact_recall(&layouts, &masks, cfg.palm_fraction, cfg.dilation_px)?;
    Ok(Evaluation {
        layouts,
        contact_recall,
    })
}

/// `metric = value` lines followed by the same pairs as one JSON object.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub contact_recall: Option<f64>,
    pub constraint_mae: Option<[Option<f64>; LAYOUT_DIM]>,
    pub sample_count: usize,
    /// `(step, smoothed loss)`.
    pub loss_curve: Vec<(usize, f64)>,
    pub config: Vec<(String, String)>,
}

impl MetricsReport {
    pub fn pairs(&self) -> Vec<(String, Value)> {
        let mut out = Vec::new();
        out.push(("sample_count".to_string(), Value::from(self.sample_count)));
        if let Some(r) = self.contact_recall {
            out.push(("contact_recall".into(), Value::from(r)));
        }
        if let Some(mae) = self.constraint_mae {
            for (name, v) in LAYOUT_NAMES.iter().zip(mae) {
                if let Some(v) = v {
                    out.push((format!("constraint_mae_{name}"), Value::from(v)));
                }
            }
        }
        for (step, loss) in &self.loss_curve {
            out.push((format!("loss_{step}"), Value::from(*loss)));
        }
        for (k, v) in &self.config {
            out.push((format!("config_{k}"), Value::from(v.clone())));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let pairs = self.pairs();
        let mut out = String::new();
        for (k, v) in &pairs {
            match v {
                Value::String(s) => out.push_str(&format!("{k} = {s}\n")),
                other => out.push_str(&format!("{k} = {other}\n")),
            }
        }
        let map: Map<String, Value> = pairs.into_iter().collect();
        out.push_str("--- json ---\n");
        out.push_str(&serde_json::to_string_pretty(&Value::Object(map)).expect("plain values serialize"));
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: &'static str,
    pub contact_recall: f64,
    pub final_loss: f64,
}

/// The three training variants compared by the ablation.
pub fn ablation_variants(base: &TrainConfig) -> [(&'static str, TrainConfig); 3] {
    let full = base.clone();
    let mut vector = base.clone();
    vector.denoiser.conditioning = Conditioning::VectorOnly;
    let mut no_mask = base.clone();
    no_mask.loss.mask_loss = false;
    [
        ("full", full),
        ("vector-conditioned", vector),
        ("no-mask-loss", no_mask),
    ]
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub row: AblationRow,
    pub params: DenoiserParams,
    pub train_time: Duration,
}

/// Trains each variant with the shared seed and scores it on `test`.
pub fn ablation_suite(
    base: &TrainConfig,
    train: &[SceneSample],
    test: &[SceneSample],
    eval: &EvalConfig,
) -> Result<Vec<AblationRun>> {
    ablation_variants(base)
        .into_iter()
        .map(|(label, cfg)| {
            let start = Instant::now();
            let outcome = train_on_samples(train, &cfg, |_, _| {})?;
            let train_time = start.elapsed();
            let ev = evaluate(&outcome.params, test, eval)?;
            let window = cfg.log_every.min(outcome.curve.len()).max(1);
            let final_loss = outcome
                .curve
                .len()
                .checked_sub(1)
                .and_then(|last| outcome.smoothed(last, window))
                .unwrap_or(f64::NAN);
            Ok(AblationRun {
                row: AblationRow {
                    label,
                    contact_recall: ev.contact_recall,
                    final_loss,
                },
                params: outcome.params,
                train_time,
            })
        })
        .collect()
}

pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!("{:<20} {:>14} {:>12}\n", "variant", "contact_recall", "final_loss");
    for r in rows {
        out.push_str(&format!(
            "{:<20} {:>14.4} {:>12.5}\n",
            r.label, r.contact_recall, r.final_loss
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centered_mask() -> Grid {
        Grid::from_fn(32, 32, |i, j| {
            if (12..20).contains(&i) && (12..20).contains(&j) {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn recall_examples() {
        let m = centered_mask();
        let on = Layout::new(0.3, 0.0, 0.0, 1.0, 0.0);
        let near = Layout::new(0.3, 0.3, 0.0, 1.0, 0.0);
        let far = Layout::new(0.3, -0.95, -0.95, 1.0, 0.0);
        let masks = [&m, &m, &m, &m];
        let r = contact_recall(&[on, near, far, on], &masks, 1.0, 2).unwrap();
        assert_eq!(r, 0.75);
        assert_eq!(contact_recall(&[far], &[&m], 1.0, 2).unwrap(), 0.0);
        assert!(contact_recall(&[far], &[&m, &m], 1.0, 2).is_err());
    }

    #[test]
    fn dilation_grows_by_the_disk() {
        let mut m = Grid::zeros(9, 9);
        m.set(4, 4, 1.0);
        let d = dilate(&m, 2);
        assert_eq!(d.sum(), 13.0);
        assert_eq!(dilate(&m, 0), m);
    }

    #[test]
    fn constraint_error_examples() {
        let l = Layout::new(0.5, 0.1, -0.2, 1.0, 0.0);
        let spec = GuidanceSpec::new([false, true, false, false, false], [0.0, 0.1, 0.0, 0.0, 0.0]).unwrap();
        let exact = constraint_error(&[l, l], &[spec, spec]).unwrap();
        assert_eq!(exact.overall, 0.0);
        let off = Layout::new(0.5, 0.3, -0.2, 1.0, 0.0);
        let e = constraint_error(&[l, off], &[spec, spec]).unwrap();
        assert!((e.per_dim[1].unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(e.per_dim[0], None);
        let none = GuidanceSpec::new([false; 5], [0.0; 5]).unwrap();
        assert!(matches!(constraint_error(&[l], &[none]), Err(Error::UndefinedMetric)));
    }

    #[test]
    fn oracle_closed_forms() {
        let sched = NoiseSchedule::build(100, ScheduleFamily::Linear).unwrap();
        for t in [1, 10, 50, 99, 100] {
            let sc = sched.signal_coef(t);
            let nc = sched.noise_coef(t);
            assert_eq!(gaussian_oracle_epsilon(sc * 3.0, t, 3.0, 0.5, &sched), 0.0);
            let x = 1.7;
            let det = gaussian_oracle_epsilon(x, t, 3.0, 0.0, &sched);
            assert!((det - (x - sc * 3.0) / nc).abs() < 1e-12 * det.abs().max(1.0));
            let (slope, offset) = oracle_coefficients(t, 3.0, 0.5, &sched);
            assert_eq!(slope, nc / (sc * sc * 0.25 + nc * nc));
            assert_eq!(offset, -slope * sc * 3.0);
        }
    }

    #[test]
    fn report_has_text_and_json() {
        let r = MetricsReport {
            contact_recall: Some(0.9),
            sample_count: 10,
            loss_curve: vec![(100, 1.5)],
            config: vec![("seed".into(), "3".into())],
            ..MetricsReport::default()
        };
        let text = r.to_text();
        assert!(text.contains("contact_recall = 0.9\n"));
        assert!(text.contains("config_seed = 3\n"));
        let json: Value = serde_json::from_str(text.split("--- json ---\n").nth(1).unwrap()).unwrap();
        assert_eq!(json["loss_100"], 1.5);
        assert!(r.contact_recall.unwrap() <= 1.0);
    }

    #[test]
    fn ablation_table_has_three_rows() {
        let labels: Vec<_> = ablation_variants(&TrainConfig::default()).iter().map(|v| v.0).collect();
        assert_eq!(labels, ["full", "vector-conditioned", "no-mask-loss"]);
        let rows: Vec<AblationRow> = labels
            .iter()
            .map(|&label| AblationRow {
                label,
                contact_recall: 0.5,
                final_loss: 1.0,
            })
            .collect();
        assert_eq!(format_ablation_table(&rows).lines().count(), 4);
    }
}
