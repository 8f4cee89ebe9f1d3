//! Latent video diffusion guided by optical flow.
//!
//! The flow adapter (a zero-initialised 3x3x3 convolution from 2 to C channels)
//! turns latent flow into a latent-shaped offset; adding it to the first-frame
//! latent gives the fused condition `z_con`, which is stacked with the noisy
//! video latent. Latents are standardised per channel with statistics stored
//! as `buffer.*` parameters.

use std::path::Path;

use ndarray::{Array1, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{decode_array, encode, CodecConfig, LatentTensor};
use crate::diffusion::{
    channel_major, denoise_with_context, frame_major, noise_from_output, read_checkpoint, sample, train,
    write_checkpoint, Checkpoint, Conditioning, EpsModel, NoiseSchedule, Prediction, SamplerConfig, ScheduleConfig,
    TrainConfig,
};
use crate::flow_predictor::FlowPredictor;
use crate::nn::{ConvSpec, Ctx, DenoiserArch, Graph, Init, ParamStore, Real, Tensor, Var};
use crate::optflow::{resample_flow, FlowEstimatorConfig};
use crate::text::embed_prompt;
use crate::video::{sample_frames, FlowField, FrameSequence, ResolutionTag};
use crate::{Error, Result};

pub const VIDEO_MODEL_KIND: &str = "video_predictor";
const MEAN: &str = "buffer.latent_mean";
const STD: &str = "buffer.latent_std";
/// Channels with less spread than this are not amplified further.
const MIN_STD: f32 = 1e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoPredictorConfig {
    pub n_frames: usize,
    pub frame_hw: (usize, usize),
    pub codec: CodecConfig,
    pub arch: DenoiserArch,
    pub schedule: ScheduleConfig,
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub prediction: Prediction,
    /// Used when the reference flow is estimated from training clips.
    pub estimator: FlowEstimatorConfig,
}

impl Default for VideoPredictorConfig {
    fn default() -> Self {
        let codec = CodecConfig::default();
        let c = codec.latent_channels();
        Self {
            n_frames: 16,
            frame_hw: (64, 64),
            codec,
            arch: DenoiserArch::new(2 * c, c),
            schedule: ScheduleConfig::default(),
            sampler: SamplerConfig::default(),
            prediction: Prediction::Velocity,
            estimator: FlowEstimatorConfig::default(),
        }
    }
}

impl VideoPredictorConfig {
    pub fn desk() -> Self {
        let base = Self::default();
        Self {
            arch: DenoiserArch {
                base_width: 16,
                cond_dim: 32,
                ..base.arch.clone()
            },
            sampler: SamplerConfig {
                steps: 20,
                ..SamplerConfig::default()
            },
            ..base
        }
    }

    /// 320x512 frames, 40x64 latents.
    pub fn paper_scale() -> Self {
        let codec = CodecConfig::paper_scale();
        let c = codec.latent_channels();
        Self {
            frame_hw: (320, 512),
            codec,
            arch: DenoiserArch::new(2 * c, c),
            ..Self::default()
        }
    }

    pub fn latent_hw(&self) -> (usize, usize) {
        (self.frame_hw.0 / self.codec.patch, self.frame_hw.1 / self.codec.patch)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.codec.validate()?;
        self.estimator.validate(self.frame_hw.0, self.frame_hw.1)?;
        NoiseSchedule::from_config(&self.schedule)?;
        let c = self.codec.latent_channels();
        let (h, w) = self.latent_hw();
        let m = self.arch.spatial_multiple();
        let bad = if self.arch.out_channels != c || self.arch.in_channels != 2 * c {
            Some(format!(
                "video denoiser needs {} inputs and {c} outputs, got {:?}",
                2 * c,
                self.arch
            ))
        } else if self.n_frames < 2 {
            Some("video prediction needs at least 2 frames".into())
        } else if self.frame_hw.0 % self.codec.patch != 0 || self.frame_hw.1 % self.codec.patch != 0 {
            Some(format!(
                "frame size {:?} is not a multiple of the patch {}",
                self.frame_hw, self.codec.patch
            ))
        } else if h % m != 0 || w % m != 0 || h < 4 || w < 4 {
            Some(format!("latent grid {h}x{w} must be at least 4 and divisible by {m}"))
        } else {
            None
        };
        bad.map_or(Ok(()), |m| Err(Error::InvalidArgument(m)))
    }

    pub fn latent_shape(&self) -> [usize; 4] {
        let (h, w) = self.latent_hw();
        [self.codec.latent_channels(), self.n_frames, h, w]
    }

    pub fn model(&self) -> VideoDenoiser {
        VideoDenoiser {
            arch: self.arch.clone(),
            prediction: self.prediction,
            schedule: NoiseSchedule::from_config(&self.schedule).expect("schedule checked by validate"),
        }
    }
}

/// Flow adapter: `[B, 2, N, h, w] -> [B, C, N, h, w]`.
pub fn flow_adapter<T: Real>(ctx: &mut Ctx<'_, T>, flow: Var, channels: usize) -> Var {
    let w = ctx.p("flow_adapter.w", &[channels, 2, 3, 3, 3], Init::Zeros);
    let b = ctx.p("flow_adapter.b", &[channels], Init::Zeros);
    ctx.g.conv3d(flow, w, Some(b), ConvSpec::same([3, 3, 3]))
}

/// Denoiser over standardised video latents. The conditioning context is the
/// standardised first-frame latent and `aux` the latent flow on the same grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoDenoiser {
    pub arch: DenoiserArch,
    pub prediction: Prediction,
    pub schedule: NoiseSchedule,
}

impl EpsModel for VideoDenoiser {
    fn arch(&self) -> &DenoiserArch {
        &self.arch
    }

    fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x_t: Var, t: &[usize], cond: &Conditioning<T>) -> Var {
        let z_f = ctx.g.input(cond.context.clone());
        let flow = ctx.g.input(cond.aux.clone().expect("video conditioning carries flow"));
        let offset = flow_adapter(ctx, flow, self.arch.out_channels);
        let z_con = ctx.g.add(z_f, offset);
        let out = denoise_with_context(ctx, &self.arch, x_t, z_con, t, &cond.text);
        noise_from_output(ctx, out, x_t, t, self.prediction, &self.schedule)
    }
}

/// `z_con = z_f + adapter(flow)` for frame-major `[N, C, h, w]` latents and `[N, 2, h, w]` flow.
pub fn fuse_condition(z_f: &LatentTensor, flow: &FlowField, params: &ParamStore<f32>) -> Result<LatentTensor> {
    let (n, c, h, w) = z_f.data.dim();
    if (flow.n_frames(), flow.height(), flow.width()) != (n, h, w) {
        return Err(Error::Shape(format!(
            "flow grid {}x{}x{} does not match latent {n}x{h}x{w}",
            flow.n_frames(),
            flow.height(),
            flow.width()
        )));
    }
    let adapter_c = params.get("flow_adapter.b").map(|b| b.shape()[0]);
    if adapter_c != Some(c) {
        return Err(Error::Shape(format!(
            "flow adapter width {adapter_c:?} does not match {c} latent channels"
        )));
    }
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, params).frozen();
    let fl = channel_major(&flow.data);
    let fv = ctx.g.input(fl.reshape(&[1, 2, n, h, w]));
    let off = flow_adapter(&mut ctx, fv, c);
    let off = frame_major(&g.value(off).clone().reshape(&[c, n, h, w]))?;
    Ok(LatentTensor {
        data: &z_f.data + &off,
        ..z_f.clone()
    })
}

/// Per-channel latent mean and spread over a set of `[N, C, h, w]` latents.
pub fn latent_stats(latents: &[&Array4<f32>]) -> Result<(Array1<f32>, Array1<f32>)> {
    let first = latents
        .first()
        .ok_or_else(|| Error::InvalidArgument("no latents".into()))?;
    let c = first.dim().1;
    let mut sum = vec![0f64; c];
    let mut sq = vec![0f64; c];
    let mut count = 0usize;
    for z in latents {
        if z.dim().1 != c {
            return Err(Error::Shape("latents differ in channel count".into()));
        }
        for (ci, lane) in z.axis_iter(Axis(1)).enumerate() {
            for v in lane.iter() {
                sum[ci] += f64::from(*v);
                sq[ci] += f64::from(*v) * f64::from(*v);
            }
        }
        count += z.len() / c;
    }
    let n = count as f64;
    let mean: Array1<f32> = sum.iter().map(|s| (s / n) as f32).collect();
    let std: Array1<f32> = sum
        .iter()
        .zip(&sq)
        .map(|(s, q)| (((q / n) - (s / n).powi(2)).max(0.0).sqrt() as f32).max(MIN_STD))
        .collect();
    Ok((mean, std))
}

fn standardise(z: &Array4<f32>, mean: &[f32], std: &[f32]) -> Array4<f32> {
    let mut out = z.clone();
    for (ci, mut lane) in out.axis_iter_mut(Axis(1)).enumerate() {
        lane.mapv_inplace(|v| (v - mean[ci]) / std[ci]);
    }
    out
}

fn unstandardise(z: &Array4<f32>, mean: &[f32], std: &[f32]) -> Array4<f32> {
    let mut out = z.clone();
    for (ci, mut lane) in out.axis_iter_mut(Axis(1)).enumerate() {
        lane.mapv_inplace(|v| v * std[ci] + mean[ci]);
    }
    out
}

fn text_tensor(prompt: &str, dim: usize) -> Tensor<f32> {
    Tensor::from_vec(&[dim], embed_prompt(prompt, dim))
}

/// A configured, parameterised video predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoPredictor {
    pub cfg: VideoPredictorConfig,
    pub params: ParamStore<f32>,
}

/// One training clip: frames, prompt and its reference flow (any grid).
#[derive(Clone, Debug)]
pub struct VideoExample {
    pub clip: FrameSequence,
    pub prompt: String,
    pub flow: FlowField,
}

impl VideoPredictor {
    /// Fresh parameters with identity latent statistics.
    pub fn init(cfg: VideoPredictorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let shape = cfg.latent_shape();
        let [c, n, h, w] = shape;
        let cond = Conditioning::new(Tensor::zeros(&shape), Tensor::zeros(&[cfg.arch.cond_dim]))
            .with_aux(Tensor::zeros(&[2, n, h, w]));
        let mut params = cfg.model().init_params(&shape, &cond, seed)?;
        params.insert(MEAN, Tensor::zeros(&[c]));
        params.insert(STD, Tensor::full(&[c], 1.0));
        Ok(Self { cfg, params })
    }

    pub fn meta(&self) -> serde_json::Value {
        serde_json::json!({ "model": VIDEO_MODEL_KIND, "config": self.cfg })
    }

    fn stats(&self) -> Result<(&[f32], &[f32])> {
        let get = |k: &str| {
            self.params
                .get(k)
                .map(Tensor::data)
                .ok_or_else(|| Error::Format(format!("parameters lack `{k}`")))
        };
        Ok((get(MEAN)?, get(STD)?))
    }

    pub fn set_stats(&mut self, mean: &Array1<f32>, std: &Array1<f32>) {
        self.params.insert(MEAN, Tensor::from_vec(&[mean.len()], mean.to_vec()));
        self.params.insert(STD, Tensor::from_vec(&[std.len()], std.to_vec()));
    }

    fn check_frames(&self, seq: &FrameSequence) -> Result<()> {
        if (seq.height(), seq.width()) != self.cfg.frame_hw {
            return Err(Error::Shape(format!(
                "frames are {}x{}, model expects {:?}",
                seq.height(),
                seq.width(),
                self.cfg.frame_hw
            )));
        }
        Ok(())
    }

    /// Standardised, tiled first-frame latent, channel-major.
    fn context(&self, first: &FrameSequence) -> Result<Tensor<f32>> {
        self.check_frames(first)?;
        let z = crate::codec::replicate_first_frame_latent(first, self.cfg.n_frames, &self.cfg.codec)?;
        let (mean, std) = self.stats()?;
        Ok(channel_major(&standardise(&z.data, mean, std)))
    }

    fn flow_tensor(&self, flow: &FlowField) -> Result<Tensor<f32>> {
        if flow.n_frames() != self.cfg.n_frames {
            return Err(Error::Shape(format!(
                "flow has {} frames, model expects {}",
                flow.n_frames(),
                self.cfg.n_frames
            )));
        }
        let (h, w) = self.cfg.latent_hw();
        Ok(channel_major(&resample_flow(flow, h, w)?.data))
    }

    fn conditioning(&self, first: &FrameSequence, prompt: &str, flow: &FlowField) -> Result<Conditioning<f32>> {
        Ok(
            Conditioning::new(self.context(first)?, text_tensor(prompt, self.cfg.arch.cond_dim))
                .with_aux(self.flow_tensor(flow)?),
        )
    }

    /// Training item: standardised clip latent and its conditioning.
    pub fn example(&self, ex: &VideoExample) -> Result<(Tensor<f32>, Conditioning<f32>)> {
        let clip = if ex.clip.n_frames() == self.cfg.n_frames {
            ex.clip.clone()
        } else {
            sample_frames(&ex.clip, self.cfg.n_frames)?
        };
        self.check_frames(&clip)?;
        let z = encode(&clip, &self.cfg.codec)?;
        let (mean, std) = self.stats()?;
        let x0 = channel_major(&standardise(&z.data, mean, std));
        Ok((x0, self.conditioning(&clip.single(0), &ex.prompt, &ex.flow)?))
    }

    /// Samples frames `[N, 3, H, W]` in `[0, 1]`; frame 0 is the conditioning frame.
    pub fn predict(&self, first: &FrameSequence, prompt: &str, flow: &FlowField, seed: u64) -> Result<FrameSequence> {
        let cond = self.conditioning(first, prompt, flow)?;
        let sched = NoiseSchedule::from_config(&self.cfg.schedule)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample(
            &self.cfg.model(),
            &self.params,
            &cond,
            &self.cfg.latent_shape(),
            &sched,
            &self.cfg.sampler,
            &mut rng,
        )?;
        let (mean, std) = self.stats()?;
        let z = unstandardise(&frame_major(&x)?, mean, std);
        let mut frames = decode_array(&z, &self.cfg.codec)?.mapv(|v| v.clamp(0.0, 1.0));
        frames.index_axis_mut(Axis(0), 0).assign(&first.frame(0));
        FrameSequence::new(frames, first.fps, format!("predicted-{seed}"))
    }

    pub fn save(&self, path: &Path, seed: u64, step: u64) -> Result<()> {
        write_checkpoint(
            path,
            &Checkpoint {
                meta: self.meta(),
                seed,
                step,
                params: self.params.clone(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(read_checkpoint(path)?)
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.meta["model"] != VIDEO_MODEL_KIND {
            return Err(Error::Format(format!(
                "checkpoint holds `{}`, not a video predictor",
                ck.meta["model"]
            )));
        }
        let cfg: VideoPredictorConfig = serde_json::from_value(ck.meta["config"].clone())?;
        cfg.validate()?;
        let m = Self { cfg, params: ck.params };
        m.stats()?;
        Ok(m)
    }
}

/// Fits latent statistics on the clips, then trains a fresh predictor.
pub fn train_video_predictor(
    examples: &[VideoExample],
    cfg: &VideoPredictorConfig,
    train_cfg: &TrainConfig,
) -> Result<(VideoPredictor, Vec<f32>)> {
    let mut model = VideoPredictor::init(cfg.clone(), train_cfg.seed)?;
    let latents: Vec<Array4<f32>> = examples
        .par_iter()
        .map(|e| encode(&e.clip, &cfg.codec).map(|z| z.data))
        .collect::<Result<_>>()?;
    let (mean, std) = latent_stats(&latents.iter().collect::<Vec<_>>())?;
    drop(latents);
    model.set_stats(&mean, &std);
    let data: Vec<(Tensor<f32>, Conditioning<f32>)> =
        examples.par_iter().map(|e| model.example(e)).collect::<Result<_>>()?;
    let sched = NoiseSchedule::from_config(&cfg.schedule)?;
    let meta = model.meta();
    let out = train(&cfg.model(), model.params, &data, &sched, train_cfg, &meta)?;
    Ok((
        VideoPredictor {
            cfg: cfg.clone(),
            params: out.params,
        },
        out.losses,
    ))
}

/// How the video predictor is guided.
#[derive(Clone, Debug)]
pub enum Guidance<'a> {
    /// Flow sampled from the flow predictor (the default).
    Cascade(&'a FlowPredictor),
    /// A given reference flow.
    Reference(&'a FlowField),
}

/// Predicts flow (when cascading) and then frames; the flow seed is `seed`, the video seed `seed + 1`.
pub fn predict_clip(
    video: &VideoPredictor,
    guidance: Guidance<'_>,
    first: &FrameSequence,
    prompt: &str,
    seed: u64,
) -> Result<(FlowField, FrameSequence)> {
    let flow = match guidance {
        Guidance::Cascade(fp) => fp.predict(first, prompt, seed)?,
        Guidance::Reference(f) => f.clone(),
    };
    let frames = video.predict(first, prompt, &flow, seed.wrapping_add(1))?;
    Ok((flow, frames))
}

/// Zero flow on the video latent grid.
pub fn zero_flow(cfg: &VideoPredictorConfig) -> FlowField {
    let (h, w) = cfg.latent_hw();
    FlowField::zeros(cfg.n_frames, h, w, ResolutionTag::Latent)
}
