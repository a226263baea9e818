//! Runs the reverse samplers with the closed-form Gaussian noise oracle and
//! compares the sample moments with the target N(3, 0.5²).

use handlayout::diffusion::{NoiseSchedule, Sampler, ScheduleFamily};
use handlayout::metrics::sampler_moment_check;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> handlayout::Result<()> {
    let sched = NoiseSchedule::build(100, ScheduleFamily::Linear)?;
    for sampler in [Sampler::Ddpm, Sampler::Ddim { eta: 1.0 }] {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let start = std::time::Instant::now();
        let r = sampler_moment_check(&sched, sampler, 3.0, 0.5, 10_000, &mut rng)?;
        println!(
            "{:<12} mean {:.4} std {:.4} -> {} ({:.2?})",
            sampler.label(),
            r.mean,
            r.std,
            if r.passed() { "pass" } else { "FAIL" },
            start.elapsed()
        );
    }
    Ok(())
}
