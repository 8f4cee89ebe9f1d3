//! Noise a latent with the forward process, then run DDIM back from it using
//! the exact noise as the "prediction": the chain lands on the original.

use phyco::diffusion::{forward_diffuse, sample_from, NoiseSchedule, SamplerConfig, SamplerKind};
use phyco::nn::{randn, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rms(t: &Tensor<f64>) -> f64 {
    (t.sum_sq() / t.numel() as f64).sqrt()
}

fn main() -> phyco::Result<()> {
    let sched = NoiseSchedule::linear(1000, 1e-4, 0.02)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x0: Tensor<f64> = randn(&mut rng, &[4, 8, 8, 8]);
    let noise: Tensor<f64> = randn(&mut rng, &[4, 8, 8, 8]);

    for t in [0, 250, 500, 999] {
        let xt = forward_diffuse(&x0, t, &noise, &sched)?;
        println!("t={t:<4} alpha_bar {:.4}  rms {:.3}", sched.alpha_bar(t), rms(&xt));
    }

    let top = *phyco::diffusion::timesteps(&sched, 50)?.last().unwrap();
    let x_top = forward_diffuse(&x0, top, &noise, &sched)?;
    let cfg = SamplerConfig {
        kind: SamplerKind::Ddim { eta: 0.0 },
        steps: 50,
    };
    let oracle = |x: &Tensor<f64>, t: usize| {
        // noise that explains x_t given the known x0
        let (a, s) = (sched.alpha_bar(t).sqrt(), (1.0 - sched.alpha_bar(t)).sqrt());
        let d: Vec<f64> = x.data().iter().zip(x0.data()).map(|(x, x0)| (x - a * x0) / s).collect();
        Ok(Tensor::from_vec(x.shape(), d))
    };
    let out = sample_from(x_top, oracle, &sched, &cfg, &mut rng)?;
    let err = out
        .data()
        .iter()
        .zip(x0.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("DDIM from t={top} with oracle noise: max |x - x0| = {err:.2e}");
    Ok(())
}
