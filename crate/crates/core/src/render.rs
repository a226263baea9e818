//! Mask rendering, overlays and the guided-sampling demos.

use std::path::Path;

use rand::Rng;

use crate::diffusion::{sample_layout, GuidanceSpec, NoisePredictor, NoiseSchedule, Sampler};
use crate::error::{Error, Result};
use crate::geometry::{interpolate_layouts, splat, Layout, LayoutMask, TemplateSpec};
use crate::grid::{pixel_center, Grid};
use crate::image::{write_pgm, write_png};

/// Overlay tint.
pub const TINT: f64 = 1.0;

/// Writes `path` as PGM and, when `png` is set, a `.png` sibling.
pub fn save_image(grid: &Grid, path: &Path, png: bool) -> Result<()> {
    write_pgm(grid, path)?;
    if png {
        write_png(grid, &path.with_extension("png"))?;
    }
    Ok(())
}

pub fn render_mask(mask: &LayoutMask, path: &Path) -> Result<()> {
    write_pgm(mask, path)
}

/// Alpha-blends each layout's splat in the tint over `scene`, later layouts
/// over earlier ones. Pixels with a zero mask keep their exact value.
pub fn compose_overlay(scene: &Grid, layouts: &[Layout], template: &TemplateSpec) -> Result<Grid> {
    let mut out = scene.clone();
    for l in layouts {
        let m = splat(l, scene.width(), scene.height(), template)?;
        blend_in(&mut out, &m)?;
    }
    Ok(out)
}

fn blend_in(out: &mut Grid, mask: &Grid) -> Result<()> {
    out.same_shape(mask)?;
    for (o, &m) in out.values_mut().iter_mut().zip(mask.values()) {
        if m != 0.0 {
            *o = (1.0 - m) * *o + m * TINT;
        }
    }
    Ok(())
}

/// Draws `n` pixel centers from `heatmap` by inverse CDF over the
/// row-major flattened grid.
pub fn draw_heatmap_points<R: Rng + ?Sized>(heatmap: &Grid, n: usize, rng: &mut R) -> Result<Vec<[f64; 2]>> {
    let mut cdf = Vec::with_capacity(heatmap.values().len());
    let mut acc = 0.0;
    for &v in heatmap.values() {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::DegenerateHeatmap);
        }
        acc += v;
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::DegenerateHeatmap);
    }
    let (w, h) = (heatmap.width(), heatmap.height());
    Ok((0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            // first index whose cumulative mass exceeds u; zero cells are never hit
            let k = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            pixel_center(k % w, k / w, w, h)
        })
        .collect())
}

/// Location guidance pinning `(x, y)`.
pub fn location_guidance(p: [f64; 2]) -> Result<GuidanceSpec> {
    GuidanceSpec::new([false, true, true, false, false], [0.0, p[0], p[1], 0.0, 0.0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSamples {
    pub points: Vec<[f64; 2]>,
    pub layouts: Vec<Layout>,
}

/// Samples `n` heatmap locations and one layout guided to each.
pub fn heatmap_guided_sample<P, R>(
    model: &P,
    heatmap: &Grid,
    n: usize,
    sched: &NoiseSchedule,
    sampler: Sampler,
    rng: &mut R,
) -> Result<HeatmapSamples>
where
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    let points = draw_heatmap_points(heatmap, n, rng)?;
    let layouts = points
        .iter()
        .map(|&p| sample_layout(model, sched, sampler, Some(&location_guidance(p)?), rng))
        .collect::<Result<_>>()?;
    Ok(HeatmapSamples { points, layouts })
}

/// Largest crop-relative palm scale accepted.
pub const MAX_RELATIVE_SIZE: f64 = 1.5;

/// Crop-relative scale `s_i = shared / width_i`.
pub fn relative_size(shared_hand_size: f64, crop_width: f64) -> Result<f64> {
    if !(crop_width > 0.0) {
        return Err(Error::Config(format!("crop width must be positive, got {crop_width}")));
    }
    let s = shared_hand_size / crop_width;
    if !(s > 0.0 && s <= MAX_RELATIVE_SIZE) {
        return Err(Error::InfeasibleSize(s));
    }
    Ok(s)
}

/// Samples one layout per crop with its palm scale pinned so every hand has
/// the same size in scene units. `model_for(i)` gives the predictor bound
/// to crop `i`.
pub fn scene_consistent_sample<P, F, R>(
    crop_widths: &[f64],
    shared_hand_size: f64,
    mut model_for: F,
    sched: &NoiseSchedule,
    sampler: Sampler,
    rng: &mut R,
) -> Result<Vec<Layout>>
where
    P: NoisePredictor,
    F: FnMut(usize) -> P,
    R: Rng + ?Sized,
{
    let sizes: Vec<f64> = crop_widths
        .iter()
        .map(|&w| relative_size(shared_hand_size, w))
        .collect::<Result<_>>()?;
    sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let spec = GuidanceSpec::new([true, false, false, false, false], [s.sqrt(), 0.0, 0.0, 0.0, 0.0])?;
            sample_layout(&model_for(i), sched, sampler, Some(&spec), rng)
        })
        .collect()
}

/// `k_steps + 1` overlays of the interpolated layouts over `scene`.
pub fn interpolate_demo(
    scene: &Grid,
    l_a: &Layout,
    l_b: &Layout,
    k_steps: usize,
    template: &TemplateSpec,
) -> Result<(Vec<Layout>, Vec<Grid>)> {
    if k_steps == 0 {
        return Err(Error::Config("k_steps must be positive".into()));
    }
    let layouts: Vec<Layout> = (0..=k_steps)
        .map(|i| interpolate_layouts(l_a, l_b, i as f64 / k_steps as f64))
        .collect::<Result<_>>()?;
    let frames = layouts
        .iter()
        .map(|l| compose_overlay(scene, std::slice::from_ref(l), template))
        .collect::<Result<_>>()?;
    Ok((layouts, frames))
}

/// Frames side by side.
pub fn strip(frames: &[Grid]) -> Result<Grid> {
    let first = frames.first().ok_or_else(|| Error::Config("no frames".into()))?;
    let (w, h) = (first.width(), first.height());
    for f in frames {
        first.same_shape(f)?;
    }
    Ok(Grid::from_fn(w * frames.len(), h, |i, j| frames[i / w].get(i % w, j)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene() -> Grid {
        Grid::from_fn(32, 32, |i, j| ((i + 2 * j) % 7) as f64 / 10.0)
    }

    #[test]
    fn overlay_examples() {
        let spec = TemplateSpec::default();
        let s = scene();
        assert_eq!(compose_overlay(&s, &[], &spec).unwrap(), s);

        let l = Layout::new(0.5, 0.0, 0.0, 1.0, 0.0);
        let out = compose_overlay(&s, &[l], &spec).unwrap();
        let m = splat(&l, 32, 32, &spec).unwrap();
        for k in 0..s.values().len() {
            let (o, mv) = (out.values()[k], m.values()[k]);
            if mv == 0.0 {
                assert_eq!(o.to_bits(), s.values()[k].to_bits());
            }
            if mv == 1.0 {
                assert_eq!(o, TINT);
            }
        }

        let l2 = Layout::new(0.4, 0.3, 0.2, 0.0, 1.0);
        let ab = compose_overlay(&s, &[l, l2], &spec).unwrap();
        let again = compose_overlay(&compose_overlay(&s, &[l], &spec).unwrap(), &[l2], &spec).unwrap();
        assert_eq!(ab, again);
    }

    #[test]
    fn point_mass_heatmap_repeats_its_pixel() {
        let mut h = Grid::zeros(8, 8);
        h.set(5, 2, 1.0);
        let pts = draw_heatmap_points(&h, 50, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(pts.iter().all(|p| *p == pixel_center(5, 2, 8, 8)));
        assert!(matches!(
            draw_heatmap_points(&Grid::zeros(4, 4), 1, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::DegenerateHeatmap)
        ));
    }

    #[test]
    fn relative_sizes() {
        assert_eq!(relative_size(0.1, 0.5).unwrap(), relative_size(0.1, 0.5).unwrap());
        let s1 = relative_size(0.1, 0.4).unwrap();
        let s2 = relative_size(0.1, 0.8).unwrap();
        assert!((s2 - s1 / 2.0).abs() < 1e-15);
        assert!(matches!(relative_size(1.0, 0.5), Err(Error::InfeasibleSize(_))));
        assert!(matches!(relative_size(-0.1, 0.5), Err(Error::InfeasibleSize(_))));
        assert!(relative_size(0.1, 0.0).is_err());
    }

    #[test]
    fn interpolation_frames() {
        let spec = TemplateSpec::default();
        let s = scene();
        let a = Layout::new(0.5, -0.4, 0.1, 1.0, 0.2);
        let b = Layout::new(0.6, 0.4, -0.2, 0.3, 1.0);
        let (ls, frames) = interpolate_demo(&s, &a, &b, 1, &spec).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(ls, vec![a, b]);
        assert_eq!(frames[0], compose_overlay(&s, &[a], &spec).unwrap());
        let (_, same) = interpolate_demo(&s, &a, &a, 4, &spec).unwrap();
        assert!(same.iter().all(|f| *f == same[0]));
        assert_eq!(strip(&same).unwrap().width(), 32 * 5);
    }
}
