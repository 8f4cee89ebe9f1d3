//! Train a small flow-guided video predictor and generate a clip from a first
//! frame, guided once by the clip's own flow and once by zero flow.
//!
//! Writes the predicted frames as PNGs when given a directory.

use phyco::diffusion::TrainConfig;
use phyco::nn::DenoiserArch;
use phyco::optflow::estimate_flow;
use phyco::oracle::{render_scene, sample_scene, Scenario};
use phyco::scoring::mse;
use phyco::video::write_sequence;
use phyco::video_predictor::{
    predict_clip, train_video_predictor, zero_flow, Guidance, VideoExample, VideoPredictorConfig,
};

fn main() -> phyco::Result<()> {
    let steps: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(400);
    let desk = VideoPredictorConfig::desk();
    let cfg = VideoPredictorConfig {
        n_frames: 8,
        arch: DenoiserArch {
            base_width: 8,
            ..desk.arch.clone()
        },
        ..desk
    };

    let mut examples = Vec::new();
    for s in Scenario::ALL {
        let c = render_scene(&sample_scene(s, 5, cfg.n_frames, 64, 64)?)?;
        let flow = estimate_flow(&c.frames, &cfg.estimator)?;
        examples.push(VideoExample {
            clip: c.frames,
            prompt: c.caption,
            flow,
        });
    }
    let (model, losses) = train_video_predictor(&examples, &cfg, &TrainConfig::desk(steps, 0))?;
    println!(
        "loss {:.3} -> {:.3} over {steps} steps",
        losses[0],
        losses[losses.len() - 1]
    );

    let ex = &examples[1];
    let first = ex.clip.single(0);
    let (_, guided) = predict_clip(&model, Guidance::Reference(&ex.flow), &first, &ex.prompt, 3)?;
    let (_, still) = predict_clip(&model, Guidance::Reference(&zero_flow(&cfg)), &first, &ex.prompt, 3)?;
    println!("\"{}\"", ex.prompt);
    println!(
        "pixel mse to the real clip: own flow {:.4}, zero flow {:.4}",
        mse(guided.data().view(), ex.clip.data().view())?,
        mse(still.data().view(), ex.clip.data().view())?
    );

    if let Some(dir) = std::env::args().nth(1) {
        write_sequence(&guided, std::path::Path::new(&dir))?;
        println!("frames written to {dir}");
    }
    Ok(())
}
