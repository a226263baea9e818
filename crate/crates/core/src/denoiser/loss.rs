//! Parameter-space and mask-space training losses.
//!
//! Reductions: sum over the 5 layout coordinates, mean over mask pixels,
//! mean over batch items.

use rand::Rng;

use super::{mask_context, DenoiserParams, GradientBundle};
use crate::diffusion::{forward_noise, normal_vec, predict_x0, x0_eps_derivative, NoiseSchedule};
use crate::error::{Error, Result};
use crate::geometry::{guard_layout, splat, splat_with_jacobian, LayoutMask, LayoutVec, TemplateSpec, LAYOUT_DIM};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight on the parameter loss.
    pub lambda: f64,
    /// Side of the square grid the mask loss is evaluated on.
    pub mask_res: usize,
    /// Whether the mask loss term is included at all.
    pub mask_loss: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            mask_res: 32,
            mask_loss: true,
        }
    }
}

/// `Σ_d (ε_d − ε̂_d)²`.
pub fn loss_para(eps: &LayoutVec, eps_hat: &LayoutVec) -> f64 {
    eps.iter().zip(eps_hat).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `∂ loss_para / ∂ε̂`.
pub fn loss_para_grad(eps: &LayoutVec, eps_hat: &LayoutVec) -> LayoutVec {
    std::array::from_fn(|k| 2.0 * (eps_hat[k] - eps[k]))
}

/// Mean squared difference between the splats of two layout vectors.
///
/// Degenerate vectors are clamped by [`guard_layout`] before splatting.
pub fn loss_mask(l0: &LayoutVec, l0_hat: &LayoutVec, res: usize, spec: &TemplateSpec) -> Result<f64> {
    let m0 = splat(&guard_layout(l0), res, res, spec)?;
    let m1 = splat(&guard_layout(l0_hat), res, res, spec)?;
    Ok(mask_mse(&m0, &m1))
}

fn mask_mse(a: &Grid, b: &Grid) -> f64 {
    let n = a.values().len() as f64;
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// Mask loss against a precomputed target splat and its gradient with
/// respect to the raw `l0_hat` (straight through the guard clamp).
pub fn loss_mask_with_grad(target: &LayoutMask, l0_hat: &LayoutVec, spec: &TemplateSpec) -> Result<(f64, LayoutVec)> {
    let (m, jac) = splat_with_jacobian(&guard_layout(l0_hat), target.width(), target.height(), spec)?;
    let n = m.values().len() as f64;
    let mut loss = 0.0;
    let mut grad = [0.0; LAYOUT_DIM];
    for (k, (mv, tv)) in m.values().iter().zip(target.values()).enumerate() {
        let diff = mv - tv;
        loss += diff * diff;
        let scale = 2.0 * diff / n;
        for (g, j) in grad.iter_mut().zip(&jac.grads[k]) {
            *g += scale * j;
        }
    }
    Ok((loss / n, grad))
}

/// One supervised pair with its target splat cached.
#[derive(Debug, Clone)]
pub struct TrainingItem {
    pub object: Grid,
    pub layout: LayoutVec,
    pub target_mask: LayoutMask,
}

impl TrainingItem {
    pub fn new(object: Grid, layout: LayoutVec, mask_res: usize, template: &TemplateSpec) -> Result<Self> {
        let target_mask = splat(&guard_layout(&layout), mask_res, mask_res, template)?;
        Ok(Self {
            object,
            layout,
            target_mask,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub mask: f64,
    pub para: f64,
}

/// `L_mask + λ·L_para` averaged over the batch, with its full gradient.
///
/// Per item, `t ~ U{1..T}` and then `ε ~ N(0, I)` are drawn from `rng` in
/// item order.
pub fn total_loss<R: Rng + ?Sized>(
    batch: &[TrainingItem],
    params: &DenoiserParams,
    cfg: &LossConfig,
    template: &TemplateSpec,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<(LossBreakdown, GradientBundle)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    if cfg.lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be >= 0, got {}", cfg.lambda)));
    }
    let mut grads = GradientBundle::zeros_like(params);
    let mut sum = LossBreakdown::default();
    for (item_idx, item) in batch.iter().enumerate() {
        let t = rng.random_range(1..=sched.steps());
        let eps: LayoutVec = normal_vec(rng);
        let l_t = forward_noise(&item.layout, t, &eps, sched)?;

        let ctx = mask_context(params.config(), &l_t, template)?;
        let (cond, enc_trace) = params.encode_traced(&item.object, ctx.as_ref())?;
        let (eps_hat, trunk_trace) = params.forward_traced(&l_t, t, &cond)?;

        let para = loss_para(&eps, &eps_hat);
        let mut d_eps = loss_para_grad(&eps, &eps_hat).map(|g| cfg.lambda * g);
        let mut mask = 0.0;
        if cfg.mask_loss {
            let l0_hat = predict_x0(&l_t, t, &eps_hat, sched)?;
            let (m, dl0) = loss_mask_with_grad(&item.target_mask, &l0_hat, template)?;
            mask = m;
            let k = x0_eps_derivative(t, sched);
            for (d, g) in d_eps.iter_mut().zip(dl0) {
                *d += k * g;
            }
        }
        let item_total = mask + cfg.lambda * para;
        if !item_total.is_finite() || !d_eps.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteLoss { item: item_idx, t });
        }
        sum.total += item_total;
        sum.mask += mask;
        sum.para += para;
        params.backward(&enc_trace, &trunk_trace, &d_eps, &mut grads);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((
        LossBreakdown {
            total: sum.total / n,
            mask: sum.mask / n,
            para: sum.para / n,
        },
        grads,
    ))
}
