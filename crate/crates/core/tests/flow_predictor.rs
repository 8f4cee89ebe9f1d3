//! Training behaviour of the flow predictor on small disc clips.

mod common;

use std::sync::OnceLock;

use common::*;
use phyco::diffusion::{loss_eps, Conditioning, NoiseSchedule, Prediction, SamplerConfig, TrainConfig};
use phyco::flow_predictor::{
    build_flow_dataset, prepare_flow_target, train_flow_predictor, FlowPredictor, FlowPredictorConfig,
};
use phyco::nn::{randn, DenoiserArch, Tensor};
use phyco::scoring::mse;
use phyco::video::FrameSequence;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PROMPT: &str = "A yellow ball rolls to the right.";

fn cfg() -> FlowPredictorConfig {
    FlowPredictorConfig {
        n_frames: 8,
        frame_hw: (32, 32),
        flow_latent_hw: (8, 8),
        arch: DenoiserArch {
            base_width: 8,
            cond_dim: 16,
            ..DenoiserArch::new(4, 2)
        },
        sampler: SamplerConfig {
            steps: 20,
            ..SamplerConfig::default()
        },
        estimator: small_estimator(),
        ..FlowPredictorConfig::default()
    }
}

fn rolling_set(n: usize, seed: u64) -> Vec<(FrameSequence, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let clip = rolling_disc(
                32,
                8,
                rng.gen_range(5.0..9.0),
                rng.gen_range(8.0..24.0),
                rng.gen_range(1.5..2.5),
            );
            (clip, PROMPT.to_string())
        })
        .collect()
}

/// Mean ε-loss over a fixed grid of timesteps and noise draws.
fn held_in_loss(model: &FlowPredictor, data: &[(Tensor<f32>, Conditioning<f32>)]) -> f64 {
    let sched = NoiseSchedule::from_config(&model.cfg.schedule).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut total, mut count) = (0.0, 0);
    for (x0, cond) in data {
        for t in (0..1000).step_by(100) {
            let mut shape = vec![1];
            shape.extend_from_slice(x0.shape());
            let x = x0.clone().reshape(&shape);
            let noise = randn(&mut rng, &shape);
            let c = Conditioning::stack(&[cond]).unwrap();
            let (l, _) = loss_eps(&model.cfg.model(), &model.params, &x, &[t], &noise, &c, &sched).unwrap();
            total += l as f64;
            count += 1;
        }
    }
    total / count as f64
}

struct Trained {
    model: FlowPredictor,
    clips: Vec<(FrameSequence, String)>,
}

fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let clips = rolling_set(8, 1);
        let data = build_flow_dataset(&clips, &cfg()).unwrap();
        let (model, _) = train_flow_predictor(&data, &cfg(), &TrainConfig::desk(600, 0)).unwrap();
        Trained { model, clips }
    })
}

#[test]
fn untrained_loss_matches_noise_variance() {
    let clips = rolling_set(4, 5);
    let data = build_flow_dataset(&clips, &cfg()).unwrap();
    let cfg = FlowPredictorConfig {
        prediction: Prediction::Noise,
        ..cfg()
    };
    let model = FlowPredictor::init(cfg, 0).unwrap();
    let loss = held_in_loss(&model, &data);
    // the unit-variance noise is the target; a fresh network predicts almost nothing
    assert!((0.8..1.25).contains(&loss), "untrained loss {loss}");
}

#[test]
fn overfits_eight_clips() {
    let t = trained();
    let cfg = &t.model.cfg;
    let (mut err, mut zero) = (0.0, 0.0);
    for (i, (clip, prompt)) in t.clips.iter().enumerate() {
        let target = prepare_flow_target(clip, cfg).unwrap();
        let pred = t.model.predict(&clip.single(0), prompt, i as u64).unwrap();
        err += mse(pred.data.view(), target.data.view()).unwrap();
        zero += target.data.mapv(|v| (v as f64).powi(2)).mean().unwrap();
    }
    let n = t.clips.len() as f64;
    println!("held-in flow mse {:.5}, zero predictor {:.5}", err / n, zero / n);
    assert!(err / n < 0.05, "held-in flow mse {}", err / n);
    assert!(err < zero, "no better than predicting no motion");
}

#[test]
fn seeded_training_is_reproducible() {
    let data = build_flow_dataset(&rolling_set(4, 2), &cfg()).unwrap();
    let (a, la) = train_flow_predictor(&data, &cfg(), &TrainConfig::desk(6, 3)).unwrap();
    let (b, lb) = train_flow_predictor(&data, &cfg(), &TrainConfig::desk(6, 3)).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a, b);
}

#[test]
fn predicts_rightward_motion_for_held_out_start() {
    let t = trained();
    for (i, (clip, prompt)) in rolling_set(4, 77).iter().enumerate() {
        let f = t.model.predict(&clip.single(0), prompt, i as u64).unwrap();
        assert!(f.data.index_axis(ndarray::Axis(0), 0).iter().all(|v| *v == 0.0));
        let u = f.data.index_axis(ndarray::Axis(1), 0).mean().unwrap();
        println!("held-out clip {i}: mean horizontal flow {u:.4}");
        assert!(u > 0.0, "mean horizontal flow {u}");
    }
}

#[test]
fn time_reversed_clips_have_larger_flow_error() {
    let t = trained();
    let cfg = &t.model.cfg;
    let (mut forward, mut reversed) = (0.0, 0.0);
    for (i, (clip, prompt)) in t.clips.iter().enumerate() {
        let back = clip.reversed();
        let p = t.model.predict(&clip.single(0), prompt, i as u64).unwrap();
        let q = t.model.predict(&back.single(0), prompt, i as u64).unwrap();
        let f = mse(p.data.view(), prepare_flow_target(clip, cfg).unwrap().data.view()).unwrap();
        let r = mse(q.data.view(), prepare_flow_target(&back, cfg).unwrap().data.view()).unwrap();
        println!("clip {i}: forward {f:.5} reversed {r:.5}");
        forward += f;
        reversed += r;
    }
    assert!(forward < reversed, "forward {forward} reversed {reversed}");
}
