//! Encode a rendered clip into the Haar latent space and decode it again.

use phyco::codec::{decode, encode, replicate_first_frame_latent, CodecConfig};
use phyco::oracle::{render_scene, sample_scene, Scenario};

fn main() -> phyco::Result<()> {
    let clip = render_scene(&sample_scene(Scenario::Bounce, 1, 16, 64, 64)?)?.frames;
    for patch in [2, 4, 8] {
        let cfg = CodecConfig {
            patch,
            ..CodecConfig::default()
        };
        let z = encode(&clip, &cfg)?;
        let back = decode(&z, &cfg)?;
        let err = (&back.data().view() - &clip.data().view())
            .mapv(f32::abs)
            .fold(0.0f32, |a, b| a.max(*b));
        let energy = |it: &mut dyn Iterator<Item = &f32>| it.map(|v| (*v as f64).powi(2)).sum::<f64>();
        println!(
            "patch {patch}: latent {:?}  max reconstruction error {err:.2e}  energy {:.3} / {:.3}",
            z.data.dim(),
            energy(&mut z.data.iter()),
            energy(&mut clip.data().iter())
        );
    }
    let cfg = CodecConfig::default();
    let ctx = replicate_first_frame_latent(&clip.single(0), 16, &cfg)?;
    println!("first-frame context {:?}", ctx.data.dim());
    Ok(())
}
