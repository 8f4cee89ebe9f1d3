#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{stack, Array3, Axis};
use phyco::benchmark::{save_manifest, BenchmarkManifest, ContentType, PromptRecord};
use phyco::codec::CodecConfig;
use phyco::diffusion::SamplerConfig;
use phyco::flow_predictor::{FlowPredictor, FlowPredictorConfig};
use phyco::nn::DenoiserArch;
use phyco::optflow::FlowEstimatorConfig;
use phyco::oracle::{
    inject_violation, render_scene, sample_scene, RenderedClip, Scenario, SceneSpec, ViolationKind, ViolationSpec,
};
use phyco::video::{write_sequence, FrameSequence};
use phyco::video_predictor::{VideoPredictor, VideoPredictorConfig};

/// Two pyramid levels, the most a 32x32 frame allows.
pub fn small_estimator() -> FlowEstimatorConfig {
    FlowEstimatorConfig {
        pyramid_levels: 2,
        ..FlowEstimatorConfig::default()
    }
}

pub fn tiny_flow_cfg() -> FlowPredictorConfig {
    FlowPredictorConfig {
        n_frames: 4,
        frame_hw: (32, 32),
        flow_latent_hw: (8, 8),
        arch: DenoiserArch::tiny(4, 2),
        sampler: SamplerConfig {
            steps: 4,
            ..SamplerConfig::default()
        },
        estimator: small_estimator(),
        ..FlowPredictorConfig::default()
    }
}

pub fn tiny_video_cfg() -> VideoPredictorConfig {
    let codec = CodecConfig::default();
    let c = codec.latent_channels();
    VideoPredictorConfig {
        n_frames: 4,
        frame_hw: (32, 32),
        codec,
        arch: DenoiserArch::tiny(2 * c, c),
        sampler: SamplerConfig {
            steps: 4,
            ..SamplerConfig::default()
        },
        estimator: small_estimator(),
        ..VideoPredictorConfig::default()
    }
}

/// Untrained but valid checkpoints with matching geometry.
pub fn tiny_checkpoints(dir: &Path) -> (PathBuf, PathBuf) {
    let (f, v) = (dir.join("flow.ckpt"), dir.join("video.ckpt"));
    FlowPredictor::init(tiny_flow_cfg(), 1).unwrap().save(&f, 1, 0).unwrap();
    VideoPredictor::init(tiny_video_cfg(), 2)
        .unwrap()
        .save(&v, 2, 0)
        .unwrap();
    (f, v)
}

/// A coherent scene plus its teleported version; retries seeds until the jump fits.
pub fn scene_pair(scenario: Scenario, seed: u64) -> (SceneSpec, RenderedClip, RenderedClip) {
    for k in 0.. {
        let spec = sample_scene(scenario, seed * 1000 + k, 16, 64, 64).unwrap();
        let clip = render_scene(&spec).unwrap();
        if let Ok(bad) = inject_violation(
            &spec,
            &clip,
            &ViolationSpec {
                kind: ViolationKind::Teleport,
                seed: k,
            },
        ) {
            return (spec, clip, bad);
        }
    }
    unreachable!()
}

pub fn write_manifest(path: &Path, prompts: Vec<PromptRecord>) {
    save_manifest(
        &BenchmarkManifest {
            version: "test".into(),
            prompts,
        },
        path,
    )
    .unwrap();
}

pub fn prompt(id: &str, scenario: Scenario, text: &str) -> PromptRecord {
    PromptRecord {
        id: id.into(),
        category: scenario.category(),
        content_type: ContentType::SimulatedExperiment,
        text: text.into(),
    }
}

/// Writes `clips[model][prompt]` under `root/<model>/<prompt>.pcvf` and returns the model map.
pub fn write_models(
    root: &Path,
    clips: &BTreeMap<String, BTreeMap<String, FrameSequence>>,
) -> BTreeMap<String, PathBuf> {
    clips
        .iter()
        .map(|(m, per_prompt)| {
            let d = root.join(m);
            std::fs::create_dir_all(&d).unwrap();
            for (p, clip) in per_prompt {
                write_sequence(clip, &d.join(format!("{p}.pcvf"))).unwrap();
            }
            (m.clone(), d)
        })
        .collect()
}

/// Anti-aliased disc of `radius` at `(cx, cy)` on a flat background.
pub fn disc_frame(size: usize, cx: f32, cy: f32, radius: f32, color: [f32; 3], background: f32) -> Array3<f32> {
    Array3::from_shape_fn((3, size, size), |(c, y, x)| {
        let d = ((x as f32 + 0.5 - cx).powi(2) + (y as f32 + 0.5 - cy).powi(2)).sqrt();
        let cover = (radius + 0.5 - d).clamp(0.0, 1.0);
        background * (1.0 - cover) + color[c] * cover
    })
}

/// Disc moving along `path(i) -> (x, y)`.
pub fn disc_clip(
    size: usize,
    n: usize,
    radius: f32,
    color: [f32; 3],
    path: impl Fn(usize) -> (f32, f32),
) -> FrameSequence {
    let frames: Vec<Array3<f32>> = (0..n)
        .map(|i| {
            let (x, y) = path(i);
            disc_frame(size, x, y, radius, color, 0.1)
        })
        .collect();
    let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
    FrameSequence::new(stack(Axis(0), &views).unwrap(), 8.0, "disc").unwrap()
}

/// Rightward-rolling disc: start `x0`, row `y`, `speed` px/frame.
pub fn rolling_disc(size: usize, n: usize, x0: f32, y: f32, speed: f32) -> FrameSequence {
    disc_clip(size, n, 4.0, [0.9, 0.8, 0.2], |i| (x0 + speed * i as f32, y))
}

/// Disc falling from rest under gravity `g` (px/frame²), integrated like the oracle.
pub fn falling_disc(size: usize, n: usize, x: f32, y0: f32, g: f32) -> FrameSequence {
    disc_clip(size, n, 4.0, [0.9, 0.3, 0.2], |i| {
        (x, y0 + 0.5 * g * (i * (i + 1)) as f32)
    })
}

/// Row of the brightness-weighted centroid of pixels brighter than the background.
pub fn centroid_row(frame: ndarray::ArrayView3<'_, f32>) -> f32 {
    let (_, h, w) = frame.dim();
    let (mut m, mut my) = (0.0f32, 0.0f32);
    for y in 0..h {
        for x in 0..w {
            let v = (frame[[0, y, x]] - 0.3).max(0.0);
            m += v;
            my += v * y as f32;
        }
    }
    my / m.max(1e-6)
}
