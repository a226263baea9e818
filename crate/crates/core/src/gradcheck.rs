//! Finite-difference oracles for the analytic gradients.
//!
//! Network gradients are compared entry by entry,
//! `|g − f| / max(|g|, |f|, floor)`. The splat Jacobian is compared per
//! layout coordinate in max norm over the grid,
//! `max_p |g_p − f_p| / max_p max(|g_p|, |f_p|)`, since individual pixels in
//! the template tails carry sensitivities many orders below the peak.

use rand::Rng;

use crate::denoiser::{total_loss, DenoiserParams, LossConfig, TrainingItem};
use crate::diffusion::NoiseSchedule;
use crate::error::Result;
use crate::geometry::{splat, splat_with_jacobian, Layout, TemplateSpec, LAYOUT_DIM};

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Random layout with palm scale in `[0.09, 0.49]`, center in `[-0.6, 0.6]²`.
pub fn random_layout<R: Rng + ?Sized>(rng: &mut R) -> Layout {
    let a = rng.random_range(0.3..0.7) * if rng.random::<bool>() { 1.0 } else { -1.0 };
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let len = rng.random_range(0.3..3.0);
    Layout::new(
        a,
        rng.random_range(-0.6..0.6),
        rng.random_range(-0.6..0.6),
        len * angle.cos(),
        len * angle.sin(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatCheck {
    pub max_rel_error: f64,
    pub worst_layout: Layout,
    pub worst_coord: usize,
}

/// Central-difference check of [`splat_with_jacobian`] for one layout.
pub fn check_splat_jacobian(
    l: &Layout,
    width: usize,
    height: usize,
    step: f64,
    spec: &TemplateSpec,
) -> Result<(f64, usize)> {
    let (_, jac) = splat_with_jacobian(l, width, height, spec)?;
    let base = l.to_array();
    let mut worst = (0.0, 0);
    for coord in 0..LAYOUT_DIM {
        let mut plus = base;
        let mut minus = base;
        plus[coord] += step;
        minus[coord] -= step;
        let mp = splat(&Layout::from_array(plus), width, height, spec)?;
        let mm = splat(&Layout::from_array(minus), width, height, spec)?;
        let fd: Vec<f64> = mp
            .values()
            .iter()
            .zip(mm.values())
            .map(|(p, m)| (p - m) / (2.0 * step))
            .collect();
        let mut diff = 0.0f64;
        let mut scale = 0.0f64;
        for (g, f) in jac.grads.iter().zip(&fd) {
            diff = diff.max((g[coord] - f).abs());
            scale = scale.max(g[coord].abs()).max(f.abs());
        }
        let e = if scale > 0.0 { diff / scale } else { diff };
        if e > worst.0 {
            worst = (e, coord);
        }
    }
    Ok(worst)
}

/// Jacobian check over `n_layouts` random layouts.
pub fn splat_jacobian_sweep<R: Rng + ?Sized>(
    n_layouts: usize,
    size: usize,
    step: f64,
    spec: &TemplateSpec,
    rng: &mut R,
) -> Result<SplatCheck> {
    let mut out = SplatCheck {
        max_rel_error: 0.0,
        worst_layout: Layout::new(1.0, 0.0, 0.0, 1.0, 0.0),
        worst_coord: 0,
    };
    for _ in 0..n_layouts {
        let l = random_layout(rng);
        let (e, coord) = check_splat_jacobian(&l, size, size, step, spec)?;
        if e >= out.max_rel_error {
            out = SplatCheck {
                max_rel_error: e,
                worst_layout: l,
                worst_coord: coord,
            };
        }
    }
    Ok(out)
}

/// Absolute floor for the network gradient check.
pub const NETWORK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub params_checked: usize,
}

/// Compares the analytic `total_loss` gradient with central differences
/// over every parameter. The loss is re-evaluated with the same seed so
/// `t` and `ε` stay fixed.
pub fn check_network_gradient(
    params: &DenoiserParams,
    batch: &[TrainingItem],
    loss_cfg: &LossConfig,
    template: &TemplateSpec,
    sched: &NoiseSchedule,
    seed: u64,
    step: f64,
) -> Result<NetworkCheck> {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let eval = |p: &DenoiserParams| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(total_loss(batch, p, loss_cfg, template, sched, &mut rng)?.0.total)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, grads) = total_loss(batch, params, loss_cfg, template, sched, &mut rng)?;
    let mut probe = params.clone();
    let mut worst = NetworkCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        params_checked: params.len(),
    };
    for k in 0..params.len() {
        let orig = probe.values()[k];
        probe.values_mut()[k] = orig + step;
        let lp = eval(&probe)?;
        probe.values_mut()[k] = orig - step;
        let lm = eval(&probe)?;
        probe.values_mut()[k] = orig;
        let fd = (lp - lm) / (2.0 * step);
        let e = relative_error(grads.values[k], fd, NETWORK_FLOOR);
        if e > worst.max_rel_error {
            worst.max_rel_error = e;
            worst.worst_index = k;
        }
    }
    Ok(worst)
}
