//! Prints the noise schedule and follows one layout through the forward
//! process and back along the deterministic reverse path.

use handlayout::diffusion::{ddim_step, forward_noise, normal_vec, predict_x0, NoiseSchedule, ScheduleFamily};
use handlayout::geometry::Layout;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> handlayout::Result<()> {
    for family in [ScheduleFamily::Linear, ScheduleFamily::Cosine] {
        let s = NoiseSchedule::build(100, family)?;
        print!("{:<7}", family.name());
        for t in [0, 1, 25, 50, 75, 100] {
            print!("  t={t:<3} signal {:.4} noise {:.4}", s.signal_coef(t), s.noise_coef(t));
        }
        println!();
    }

    let s = NoiseSchedule::build(100, ScheduleFamily::Linear)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x0 = Layout::new(0.5, 0.2, -0.1, 0.6, 0.8).to_array();
    let eps = normal_vec(&mut rng);
    let mut x = forward_noise(&x0, 100, &eps, &s)?;
    println!("x_100 = {}", Layout::from_array(x));
    for t in (1..=100).rev() {
        // the true noise keeps the deterministic step on the forward trajectory
        x = ddim_step(&x, t, &eps, &s, 0.0, &mut rng)?;
        if t % 25 == 1 {
            println!("x_{:<3} = {}", t - 1, Layout::from_array(x));
        }
    }
    let at_50 = forward_noise(&x0, 50, &eps, &s)?;
    println!(
        "predict_x0 from x_50 recovers {}",
        Layout::from_array(predict_x0(&at_50, 50, &eps, &s)?)
    );
    Ok(())
}
