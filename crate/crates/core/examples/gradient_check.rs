//! Checks the analytic splat Jacobian and the full network gradient
//! against central finite differences.

use handlayout::denoiser::{DenoiserConfig, DenoiserParams, LossConfig, TrainingItem};
use handlayout::diffusion::{NoiseSchedule, ScheduleFamily};
use handlayout::geometry::TemplateSpec;
use handlayout::gradcheck::{check_network_gradient, random_layout, splat_jacobian_sweep};
use handlayout::grid::Grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> handlayout::Result<()> {
    let spec = TemplateSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let report = splat_jacobian_sweep(100, 64, 1e-4, &spec, &mut rng)?;
    println!(
        "splat jacobian: max rel err {:.3e} (coord {}, layout {})",
        report.max_rel_error, report.worst_coord, report.worst_layout
    );

    let cfg = DenoiserConfig::tiny();
    let params = DenoiserParams::init(cfg, &mut rng)?;
    let loss_cfg = LossConfig {
        mask_res: 16,
        ..LossConfig::default()
    };
    let batch: Vec<TrainingItem> = (0..2)
        .map(|_| {
            let object = Grid::from_fn(cfg.grid, cfg.grid, |_, _| rng.random::<f64>());
            let layout = random_layout(&mut rng).to_array();
            TrainingItem::new(object, layout, loss_cfg.mask_res, &spec)
        })
        .collect::<Result<_, _>>()?;
    let sched = NoiseSchedule::build(100, ScheduleFamily::Linear)?;
    let net = check_network_gradient(&params, &batch, &loss_cfg, &spec, &sched, 3, 1e-5)?;
    println!(
        "network gradient: max rel err {:.3e} over {} parameters (worst index {})",
        net.max_rel_error, net.params_checked, net.worst_index
    );
    Ok(())
}
