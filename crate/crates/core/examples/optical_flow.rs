//! Estimate flow on a translating texture, check it against the known shift,
//! then use it to warp each frame back onto its predecessor.

use ndarray::{stack, Axis};
use phyco::optflow::{estimate_flow, shifted_texture, warp_by_flow, FlowEstimatorConfig};
use phyco::video::FrameSequence;

fn main() -> phyco::Result<()> {
    let (dx, dy) = (2.0f32, -1.0f32);
    let frames: Vec<_> = (0..6)
        .map(|i| shifted_texture(64, 64, 11, dx * i as f32, dy * i as f32))
        .collect();
    let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
    let clip = FrameSequence::new(stack(Axis(0), &views).unwrap(), 8.0, "shift")?;

    let flow = estimate_flow(&clip, &FlowEstimatorConfig::default())?;
    for i in 1..clip.n_frames() {
        let f = flow.data.index_axis(Axis(0), i);
        let (u, v) = (f.index_axis(Axis(0), 0), f.index_axis(Axis(0), 1));
        let epe = u
            .iter()
            .zip(v.iter())
            .map(|(u, v)| ((u - dx).powi(2) + (v - dy).powi(2)).sqrt())
            .sum::<f32>()
            / u.len() as f32;
        let warped = warp_by_flow(clip.frame(i - 1), f)?;
        let err = (&warped - &clip.frame(i)).mapv(f32::abs).mean().unwrap();
        let raw = (&clip.frame(i - 1) - &clip.frame(i)).mapv(f32::abs).mean().unwrap();
        println!(
            "frame {i}: mean flow ({:+.2}, {:+.2})  EPE {epe:.3}  photometric {raw:.4} -> {err:.4}",
            u.mean().unwrap(),
            v.mean().unwrap()
        );
    }
    println!("frame 0 flow magnitude {}", flow.mean_magnitude(0));
    Ok(())
}
