//! Train a small flow predictor on rendered clips, checkpoint it, and sample
//! flow for an unseen first frame.
//!
//! ```text
//! cargo run --release --example flow_prediction [-- steps]
//! ```

use phyco::diffusion::TrainConfig;
use phyco::flow_predictor::{
    build_flow_dataset, prepare_flow_target, train_flow_predictor, FlowPredictor, FlowPredictorConfig,
};
use phyco::oracle::{render_scene, sample_scene, Scenario};
use phyco::scoring::mse;

fn main() -> phyco::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let cfg = FlowPredictorConfig::desk();

    let mut clips = Vec::new();
    for seed in 0..4u64 {
        for s in Scenario::ALL {
            let c = render_scene(&sample_scene(s, 100 + seed, cfg.n_frames, 64, 64)?)?;
            clips.push((c.frames, c.caption));
        }
    }
    let data = build_flow_dataset(&clips, &cfg)?;
    println!("{} training items of shape {:?}", data.len(), data[0].0.shape());

    let (model, losses) = train_flow_predictor(&data, &cfg, &TrainConfig::desk(steps, 0))?;
    let head = losses[..10].iter().sum::<f32>() / 10.0;
    let tail = losses[losses.len() - 10..].iter().sum::<f32>() / 10.0;
    println!("loss {head:.3} -> {tail:.3} over {steps} steps");

    let path = std::env::temp_dir().join("phyco_flow.ckpt");
    model.save(&path, 0, steps as u64)?;
    let model = FlowPredictor::load(&path)?;

    let test = render_scene(&sample_scene(Scenario::GravityDrop, 999, cfg.n_frames, 64, 64)?)?;
    let reference = prepare_flow_target(&test.frames, &cfg)?;
    let predicted = model.predict(&test.frames.single(0), &test.caption, 7)?;
    let zero = predicted.data.mapv(|_| 0.0);
    println!("\"{}\"", test.caption);
    println!(
        "mse to reference flow {:.5} (zero flow: {:.5})",
        mse(predicted.data.view(), reference.data.view())?,
        mse(zero.view(), reference.data.view())?
    );
    for i in [1, cfg.n_frames / 2, cfg.n_frames - 1] {
        println!(
            "  frame {i:>2}: predicted |flow| {:.3}, reference {:.3}",
            predicted.mean_magnitude(i),
            reference.mean_magnitude(i)
        );
    }
    Ok(())
}
