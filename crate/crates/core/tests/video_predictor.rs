//! Training behaviour of the flow-guided video predictor on small disc clips.

mod common;

use std::sync::OnceLock;

use common::*;
use phyco::codec::CodecConfig;
use phyco::diffusion::{SamplerConfig, TrainConfig};
use phyco::flow_predictor::{build_flow_dataset, train_flow_predictor, FlowPredictor, FlowPredictorConfig};
use phyco::nn::DenoiserArch;
use phyco::optflow::estimate_flow;
use phyco::scoring::mse;
use phyco::video_predictor::{
    predict_clip, train_video_predictor, Guidance, VideoExample, VideoPredictor, VideoPredictorConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PROMPT: &str = "A red ball falls straight down from rest.";

fn cfg() -> VideoPredictorConfig {
    let codec = CodecConfig::default();
    let c = codec.latent_channels();
    VideoPredictorConfig {
        n_frames: 8,
        frame_hw: (32, 32),
        codec,
        arch: DenoiserArch {
            base_width: 16,
            cond_dim: 16,
            ..DenoiserArch::new(2 * c, c)
        },
        sampler: SamplerConfig {
            steps: 20,
            ..SamplerConfig::default()
        },
        estimator: small_estimator(),
        ..VideoPredictorConfig::default()
    }
}

fn falling_set(n: usize, seed: u64) -> Vec<VideoExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let clip = falling_disc(
                32,
                8,
                rng.gen_range(6.0..26.0),
                rng.gen_range(5.0..8.0),
                rng.gen_range(0.5..0.8),
            );
            let flow = estimate_flow(&clip, &cfg().estimator).unwrap();
            VideoExample {
                clip,
                prompt: PROMPT.into(),
                flow,
            }
        })
        .collect()
}

fn pixel_mse(model: &VideoPredictor, set: &[VideoExample]) -> f64 {
    set.iter()
        .enumerate()
        .map(|(i, e)| {
            let (_, v) = predict_clip(
                model,
                Guidance::Reference(&e.flow),
                &e.clip.single(0),
                &e.prompt,
                i as u64,
            )
            .unwrap();
            mse(v.data().view(), e.clip.data().view()).unwrap()
        })
        .sum::<f64>()
        / set.len() as f64
}

const STEPS: usize = 1000;

fn matched() -> &'static (VideoPredictor, Vec<VideoExample>) {
    static M: OnceLock<(VideoPredictor, Vec<VideoExample>)> = OnceLock::new();
    M.get_or_init(|| {
        let train = falling_set(8, 1);
        let (m, _) = train_video_predictor(&train, &cfg(), &TrainConfig::desk(STEPS, 0)).unwrap();
        (m, train)
    })
}

#[test]
fn overfits_eight_clips() {
    let (model, train) = matched();
    let e = pixel_mse(model, train);
    println!("held-in pixel mse {e:.5}");
    assert!(e < 0.01, "held-in pixel mse {e}");
}

#[test]
fn shuffled_flow_training_predicts_worse() {
    let (model, train) = matched();
    let mut shuffled = train.clone();
    for i in 0..shuffled.len() {
        shuffled[i].flow = train[(i + 3) % train.len()].flow.clone();
    }
    let (blind, _) = train_video_predictor(&shuffled, &cfg(), &TrainConfig::desk(STEPS, 0)).unwrap();
    let held_out = falling_set(8, 50);
    let (a, b) = (pixel_mse(model, &held_out), pixel_mse(&blind, &held_out));
    println!("held-out pixel mse: matched {a:.5} shuffled {b:.5}");
    assert!(a < b, "matched {a} shuffled {b}");
}

#[test]
fn seeded_training_is_reproducible() {
    let data = falling_set(3, 2);
    let (a, la) = train_video_predictor(&data, &cfg(), &TrainConfig::desk(4, 3)).unwrap();
    let (b, lb) = train_video_predictor(&data, &cfg(), &TrainConfig::desk(4, 3)).unwrap();
    assert_eq!(la, lb);
    let e = &data[0];
    let pa = a.predict(&e.clip.single(0), PROMPT, &e.flow, 5).unwrap();
    let pb = b.predict(&e.clip.single(0), PROMPT, &e.flow, 5).unwrap();
    assert_eq!(pa, pb);
}

#[test]
fn predicted_disc_falls() {
    let (model, _) = matched();
    for (i, e) in falling_set(3, 70).iter().enumerate() {
        let v = model.predict(&e.clip.single(0), &e.prompt, &e.flow, i as u64).unwrap();
        let rows: Vec<f32> = (0..v.n_frames()).map(|k| centroid_row(v.frame(k))).collect();
        println!("held-out clip {i}: centroid rows {rows:.1?}");
        assert!(rows[rows.len() - 1] > rows[0] + 2.0, "{rows:?}");
    }
}

#[test]
fn reference_flow_guidance_is_no_worse_than_cascade() {
    let (video, train) = matched();
    let fcfg = FlowPredictorConfig {
        n_frames: 8,
        frame_hw: (32, 32),
        flow_latent_hw: (8, 8),
        arch: DenoiserArch {
            base_width: 8,
            cond_dim: 16,
            ..DenoiserArch::new(4, 2)
        },
        sampler: SamplerConfig {
            steps: 10,
            ..SamplerConfig::default()
        },
        estimator: small_estimator(),
        ..FlowPredictorConfig::default()
    };
    let clips: Vec<_> = train.iter().map(|e| (e.clip.clone(), e.prompt.clone())).collect();
    let (flow, _) = train_flow_predictor(
        &build_flow_dataset(&clips, &fcfg).unwrap(),
        &fcfg,
        &TrainConfig::desk(300, 0),
    )
    .unwrap();
    let held_out = falling_set(50, 9);
    let (mut reference, mut cascade) = (0.0, 0.0);
    for (i, e) in held_out.iter().enumerate() {
        let first = e.clip.single(0);
        let (_, r) = predict_clip(video, Guidance::Reference(&e.flow), &first, PROMPT, i as u64).unwrap();
        let (_, c) = predict_clip(
            video,
            Guidance::Cascade(&flow as &FlowPredictor),
            &first,
            PROMPT,
            i as u64,
        )
        .unwrap();
        reference += mse(r.data().view(), e.clip.data().view()).unwrap();
        cascade += mse(c.data().view(), e.clip.data().view()).unwrap();
    }
    println!(
        "mean pixel mse over 50 clips: reference {:.5} cascade {:.5}",
        reference / 50.0,
        cascade / 50.0
    );
    assert!(reference <= cascade);
}
