//! Noise schedules, forward corruption and reverse samplers.
//!
//! Coefficient convention: `ᾱ_t` multiplies the *noise*,
//!
//! ```text
//! x_t = √(1 − ᾱ_t)·x₀ + √ᾱ_t·ε
//! ```
//!
//! with `ᾱ_0 = 0` (clean) rising to `ᾱ_T ≈ 1` (pure noise). To keep this
//! unambiguous the two factors are exposed as [`NoiseSchedule::signal_coef`]
//! and [`NoiseSchedule::noise_coef`]; `γ_t = 1 − ᾱ_t` is the signal power.
//!
//! Both samplers share one generalized reverse update,
//!
//! ```text
//! x_{t−1} = √γ_{t−1}·x̂₀ + √(1 − γ_{t−1} − σ²)·ε̂ + σ·z
//! ```
//!
//! DDPM uses the posterior std for `σ`, DDIM scales it by `η`.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{Layout, LayoutVec, LAYOUT_DIM};

/// Largest `ᾱ` produced by the built-in families.
pub const ALPHA_BAR_CEILING: f64 = 1.0 - 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleFamily {
    Linear,
    Cosine,
}

impl ScheduleFamily {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleFamily::Linear => "linear",
            ScheduleFamily::Cosine => "cosine",
        }
    }
}

impl std::str::FromStr for ScheduleFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleFamily::Linear),
            "cosine" => Ok(ScheduleFamily::Cosine),
            other => Err(Error::Config(format!("unknown schedule family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    family: ScheduleFamily,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a `T`-step schedule.
    ///
    /// * linear: `ᾱ_t = (t / T)·(1 − 10⁻⁵)`
    /// * cosine: `ᾱ_t = (1 − f(t)/f(0))·(1 − 10⁻⁵)` with
    ///   `f(t) = cos²(((t/T) + 0.008) / 1.008 · π/2)`
    pub fn build(steps: usize, family: ScheduleFamily) -> Result<Self> {
        if steps < 10 {
            return Err(Error::ScheduleTooShort(steps));
        }
        let total = steps as f64;
        let alpha_bar = match family {
            ScheduleFamily::Linear => (0..=steps).map(|t| t as f64 / total * ALPHA_BAR_CEILING).collect(),
            ScheduleFamily::Cosine => {
                let f = |t: usize| {
                    let phase = (t as f64 / total + 0.008) / 1.008 * std::f64::consts::FRAC_PI_2;
                    phase.cos().powi(2)
                };
                let f0 = f(0);
                (0..=steps).map(|t| (1.0 - f(t) / f0) * ALPHA_BAR_CEILING).collect()
            }
        };
        Ok(Self { family, alpha_bar })
    }

    pub fn family(&self) -> ScheduleFamily {
        self.family
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::TimestepOutOfRange { t, max: self.steps() });
        }
        Ok(())
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `√(1 − ᾱ_t)`, the factor on the clean sample.
    pub fn signal_coef(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    /// `√ᾱ_t`, the factor on the noise.
    pub fn noise_coef(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    /// Per-step signal retention `γ_t / γ_{t−1}` for `t ≥ 1`.
    pub fn step_alpha(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]) / (1.0 - self.alpha_bar[t - 1])
    }

    /// `β_t = 1 − γ_t / γ_{t−1}`.
    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.step_alpha(t)
    }

    /// Noise std injected by the ancestral sampler: `√β_t`, and zero at
    /// `t = 1` so the last step lands on `x̂₀`.
    pub fn ancestral_sigma(&self, t: usize) -> f64 {
        if t <= 1 {
            0.0
        } else {
            self.beta(t).max(0.0).sqrt()
        }
    }

    /// Std of `q(x_{t−1} | x_t, x₀)`; zero at `t = 1`.
    pub fn posterior_sigma(&self, t: usize) -> f64 {
        let ab = self.alpha_bar[t];
        let ab_prev = self.alpha_bar[t - 1];
        let var = ab_prev / ab * (1.0 - self.step_alpha(t));
        var.max(0.0).sqrt()
    }

    /// Audit table, one `t alpha_bar` line per step.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (t, ab) in self.alpha_bar.iter().enumerate() {
            let _ = writeln!(out, "{t} {ab:.17e}");
        }
        out
    }
}

pub fn forward_noise<const N: usize>(
    x0: &[f64; N],
    t: usize,
    eps: &[f64; N],
    sched: &NoiseSchedule,
) -> Result<[f64; N]> {
    sched.check_t(t)?;
    let (sc, nc) = (sched.signal_coef(t), sched.noise_coef(t));
    Ok(std::array::from_fn(|k| sc * x0[k] + nc * eps[k]))
}

/// Clean-sample estimate `x̂₀ = (x_t − √ᾱ_t·ε̂) / √(1 − ᾱ_t)`.
pub fn predict_x0<const N: usize>(
    x_t: &[f64; N],
    t: usize,
    eps_hat: &[f64; N],
    sched: &NoiseSchedule,
) -> Result<[f64; N]> {
    sched.check_t(t)?;
    if t == 0 {
        return Ok(*x_t);
    }
    let ab = sched.alpha_bar(t);
    if ab >= 1.0 - 1e-12 {
        return Err(Error::DivisionGuard(t));
    }
    let inv_sc = 1.0 / (1.0 - ab).sqrt();
    let ratio = ab.sqrt() * inv_sc;
    Ok(std::array::from_fn(|k| inv_sc * x_t[k] - ratio * eps_hat[k]))
}

/// `∂x̂₀/∂ε̂` (the same scalar for every coordinate).
pub fn x0_eps_derivative(t: usize, sched: &NoiseSchedule) -> f64 {
    if t == 0 {
        return 0.0;
    }
    let ab = sched.alpha_bar(t);
    -(ab / (1.0 - ab)).sqrt()
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec<const N: usize, R: Rng + ?Sized>(rng: &mut R) -> [f64; N] {
    std::array::from_fn(|_| standard_normal(rng))
}

/// Generalized reverse update
/// `x_{t−1} = √γ_{t−1}·x̂₀ + √(1 − γ_{t−1} − σ_m²)·ε̂ + σ_n·z`.
///
/// With `σ_m` the posterior std the deterministic part is the posterior
/// mean; `σ_n = σ_m` is the non-Markovian family of DDIM. No random numbers
/// are drawn when `noise_sigma == 0`.
pub fn reverse_step<const N: usize, R: Rng + ?Sized>(
    x_t: &[f64; N],
    t: usize,
    eps_hat: &[f64; N],
    mean_sigma: f64,
    noise_sigma: f64,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<[f64; N]> {
    if t == 0 {
        return Err(Error::TimestepOutOfRange { t, max: sched.steps() });
    }
    sched.check_t(t)?;
    let x0_hat = predict_x0(x_t, t, eps_hat, sched)?;
    let gamma_prev = 1.0 - sched.alpha_bar(t - 1);
    let mean_x0 = gamma_prev.sqrt();
    let dir = (1.0 - gamma_prev - mean_sigma * mean_sigma).max(0.0).sqrt();
    let mut out: [f64; N] = std::array::from_fn(|k| mean_x0 * x0_hat[k] + dir * eps_hat[k]);
    if noise_sigma > 0.0 {
        for v in out.iter_mut() {
            *v += noise_sigma * standard_normal(rng);
        }
    }
    Ok(out)
}

fn check_step(t: usize, sched: &NoiseSchedule) -> Result<()> {
    if t == 0 || t > sched.steps() {
        return Err(Error::TimestepOutOfRange { t, max: sched.steps() });
    }
    Ok(())
}

/// Ancestral step: posterior mean plus `√β_t·z` (noiseless at `t = 1`).
pub fn ddpm_step<const N: usize, R: Rng + ?Sized>(
    x_t: &[f64; N],
    t: usize,
    eps_hat: &[f64; N],
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<[f64; N]> {
    check_step(t, sched)?;
    reverse_step(
        x_t,
        t,
        eps_hat,
        sched.posterior_sigma(t),
        sched.ancestral_sigma(t),
        sched,
        rng,
    )
}

/// `η = 0` is the deterministic DDIM update; `η = 1` is [`ddpm_step`].
pub fn ddim_step<const N: usize, R: Rng + ?Sized>(
    x_t: &[f64; N],
    t: usize,
    eps_hat: &[f64; N],
    sched: &NoiseSchedule,
    eta: f64,
    rng: &mut R,
) -> Result<[f64; N]> {
    check_step(t, sched)?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Config(format!("eta {eta} outside [0, 1]")));
    }
    reverse_step(
        x_t,
        t,
        eps_hat,
        eta * sched.posterior_sigma(t),
        eta * sched.ancestral_sigma(t),
        sched,
        rng,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampler {
    Ddpm,
    Ddim { eta: f64 },
}

impl Sampler {
    pub fn step<const N: usize, R: Rng + ?Sized>(
        &self,
        x_t: &[f64; N],
        t: usize,
        eps_hat: &[f64; N],
        sched: &NoiseSchedule,
        rng: &mut R,
    ) -> Result<[f64; N]> {
        match *self {
            Sampler::Ddpm => ddpm_step(x_t, t, eps_hat, sched, rng),
            Sampler::Ddim { eta } => ddim_step(x_t, t, eps_hat, sched, eta, rng),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Sampler::Ddpm => "ddpm".to_string(),
            Sampler::Ddim { eta } => format!("ddim(eta={eta})"),
        }
    }
}

/// Indicator mask plus clean target for hijacked generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceSpec<const N: usize = LAYOUT_DIM> {
    pub mask: [bool; N],
    pub target: [f64; N],
}

impl<const N: usize> GuidanceSpec<N> {
    /// Unconstrained entries of `target` are zeroed.
    pub fn new(mask: [bool; N], target: [f64; N]) -> Result<Self> {
        if !target.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("guidance target must be finite".into()));
        }
        let target = std::array::from_fn(|k| if mask[k] { target[k] } else { 0.0 });
        Ok(Self { mask, target })
    }

    pub fn full(target: [f64; N]) -> Result<Self> {
        Self::new([true; N], target)
    }

    pub fn indicator(&self) -> [f64; N] {
        self.mask.map(|m| if m { 1.0 } else { 0.0 })
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }
}

/// Overwrites constrained coordinates with the target noised to level `t`,
/// drawing fresh noise for each constrained coordinate.
pub fn apply_guidance<const N: usize, R: Rng + ?Sized>(
    x_t: &[f64; N],
    t: usize,
    spec: &GuidanceSpec<N>,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<[f64; N]> {
    sched.check_t(t)?;
    let (sc, nc) = (sched.signal_coef(t), sched.noise_coef(t));
    let mut out = *x_t;
    for k in 0..N {
        if spec.mask[k] {
            let eps = standard_normal(rng);
            out[k] = sc * spec.target[k] + nc * eps;
        }
    }
    Ok(out)
}

/// Runs `T` reverse steps from `x_T`, hijacking after every step when
/// guidance is given.
pub fn run_reverse_chain<const N: usize, R, F>(
    x_big_t: [f64; N],
    sched: &NoiseSchedule,
    sampler: Sampler,
    guidance: Option<&GuidanceSpec<N>>,
    mut predict: F,
    rng: &mut R,
) -> Result<[f64; N]>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64; N], usize) -> Result<[f64; N]>,
{
    let mut x = x_big_t;
    for t in (1..=sched.steps()).rev() {
        let eps_hat = predict(&x, t)?;
        x = sampler.step(&x, t, &eps_hat, sched, rng)?;
        if let Some(spec) = guidance {
            x = apply_guidance(&x, t - 1, spec, sched, rng)?;
        }
    }
    Ok(x)
}

/// Noise predictor over layout vectors with its conditioning bound in.
pub trait NoisePredictor {
    fn predict_noise(&self, x_t: &LayoutVec, t: usize) -> Result<LayoutVec>;
}

impl<F> NoisePredictor for F
where
    F: Fn(&LayoutVec, usize) -> Result<LayoutVec>,
{
    fn predict_noise(&self, x_t: &LayoutVec, t: usize) -> Result<LayoutVec> {
        self(x_t, t)
    }
}

/// Smallest approach-vector norm accepted from a finished chain.
pub const MIN_SAMPLED_DIRECTION: f64 = 1e-8;

/// Draws one layout: `x_T ~ N(0, I)` pushed through the reverse chain.
///
/// The size root is re-signed positive. The approach vector is returned
/// un-normalized so constrained coordinates survive verbatim. A chain that
/// ends with a degenerate direction is redrawn once.
pub fn sample_layout<P, R>(
    denoiser: &P,
    sched: &NoiseSchedule,
    sampler: Sampler,
    guidance: Option<&GuidanceSpec>,
    rng: &mut R,
) -> Result<Layout>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    for _ in 0..2 {
        let x_big_t = normal_vec::<LAYOUT_DIM, _>(rng);
        let v = run_reverse_chain(
            x_big_t,
            sched,
            sampler,
            guidance,
            |x, t| denoiser.predict_noise(x, t),
            rng,
        )?;
        let mut l = Layout::from_array(v);
        if l.b1.hypot(l.b2) < MIN_SAMPLED_DIRECTION || !l.b1.is_finite() || !l.b2.is_finite() {
            continue;
        }
        l.a = l.a.abs();
        return Ok(l);
    }
    Err(Error::DegenerateSample)
}
