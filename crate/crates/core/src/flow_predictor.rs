//! Latent flow diffusion: predicts the optical flow of a clip from its first
//! frame and prompt.
//!
//! The first-frame latent `z_f` is projected per position from the codec's
//! channels to two flow-aligned channels (the latent adapter) and stacked with
//! the noisy flow, so the denoiser sees four input channels.

use std::path::Path;

use ndarray::{Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{replicate_first_frame_latent, CodecConfig};
use crate::diffusion::{
    channel_major, denoise_with_context, frame_major, noise_from_output, read_checkpoint, sample, train,
    write_checkpoint, Checkpoint, Conditioning, EpsModel, NoiseSchedule, Prediction, SamplerConfig, ScheduleConfig,
    TrainConfig,
};
use crate::nn::{ConvSpec, Ctx, DenoiserArch, Graph, Init, ParamStore, Real, Tensor, Var};
use crate::optflow::{estimate_flow, resample_flow, FlowEstimatorConfig};
use crate::text::embed_prompt;
use crate::video::{resize_tensor, sample_frames, FlowField, FrameSequence, ResolutionTag};
use crate::{Error, Result};

pub const FLOW_MODEL_KIND: &str = "flow_predictor";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterActivation {
    Identity,
    #[default]
    Silu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowPredictorConfig {
    pub n_frames: usize,
    /// Pixel geometry of the clips the model is trained and evaluated on.
    pub frame_hw: (usize, usize),
    pub flow_latent_hw: (usize, usize),
    pub codec: CodecConfig,
    pub arch: DenoiserArch,
    pub adapter_activation: AdapterActivation,
    /// Latent flow is multiplied by this before diffusion and divided after sampling.
    pub flow_scale: f32,
    #[serde(default)]
    pub prediction: Prediction,
    pub schedule: ScheduleConfig,
    pub sampler: SamplerConfig,
    pub estimator: FlowEstimatorConfig,
}

impl Default for FlowPredictorConfig {
    fn default() -> Self {
        Self {
            n_frames: 16,
            frame_hw: (64, 64),
            flow_latent_hw: (16, 16),
            codec: CodecConfig::default(),
            arch: DenoiserArch::new(4, 2),
            adapter_activation: AdapterActivation::Silu,
            flow_scale: 2.0,
            prediction: Prediction::Velocity,
            schedule: ScheduleConfig::default(),
            sampler: SamplerConfig::default(),
            estimator: FlowEstimatorConfig::default(),
        }
    }
}

impl FlowPredictorConfig {
    /// Narrow network and short sampler for single-core training.
    pub fn desk() -> Self {
        Self {
            arch: DenoiserArch {
                base_width: 8,
                cond_dim: 32,
                ..DenoiserArch::new(4, 2)
            },
            sampler: SamplerConfig {
                steps: 20,
                ..SamplerConfig::default()
            },
            ..Self::default()
        }
    }

    /// 256x256 frames, 32x32 latent flow.
    pub fn paper_scale() -> Self {
        Self {
            frame_hw: (256, 256),
            flow_latent_hw: (32, 32),
            codec: CodecConfig::paper_scale(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.codec.validate()?;
        self.estimator.validate(self.frame_hw.0, self.frame_hw.1)?;
        NoiseSchedule::from_config(&self.schedule)?;
        let m = self.arch.spatial_multiple();
        let (fh, fw) = self.flow_latent_hw;
        let bad = if self.arch.in_channels != 4 || self.arch.out_channels != 2 {
            Some(format!(
                "flow denoiser needs 4 input and 2 output channels, got {:?}",
                self.arch
            ))
        } else if self.n_frames < 2 {
            Some("flow prediction needs at least 2 frames".into())
        } else if fh % m != 0 || fw % m != 0 || fh < 4 || fw < 4 {
            Some(format!("flow grid {fh}x{fw} must be at least 4 and divisible by {m}"))
        } else if self.frame_hw.0 % self.codec.patch != 0 || self.frame_hw.1 % self.codec.patch != 0 {
            Some(format!(
                "frame size {:?} is not a multiple of the patch {}",
                self.frame_hw, self.codec.patch
            ))
        } else if !(self.flow_scale > 0.0 && self.flow_scale.is_finite()) {
            Some(format!("flow scale {} must be positive", self.flow_scale))
        } else {
            None
        };
        bad.map_or(Ok(()), |m| Err(Error::InvalidArgument(m)))
    }

    pub fn flow_shape(&self) -> [usize; 4] {
        [2, self.n_frames, self.flow_latent_hw.0, self.flow_latent_hw.1]
    }

    pub fn model(&self) -> FlowDenoiser {
        FlowDenoiser {
            arch: self.arch.clone(),
            latent_channels: self.codec.latent_channels(),
            activation: self.adapter_activation,
            prediction: self.prediction,
            schedule: NoiseSchedule::from_config(&self.schedule).expect("schedule checked by validate"),
        }
    }
}

/// Per-position `C -> 2` projection of the first-frame latent.
pub fn latent_adapter<T: Real>(ctx: &mut Ctx<'_, T>, z_f: Var, channels: usize, act: AdapterActivation) -> Var {
    let w = ctx.p(
        "latent_adapter.w",
        &[2, channels, 1, 1, 1],
        Init::FanIn {
            fan_in: channels,
            gain: 1.0,
        },
    );
    let b = ctx.p("latent_adapter.b", &[2], Init::Zeros);
    let y = ctx.g.conv3d(z_f, w, Some(b), ConvSpec::same([1, 1, 1]));
    match act {
        AdapterActivation::Identity => y,
        AdapterActivation::Silu => ctx.g.silu(y),
    }
}

/// Denoiser over `[B, 2, N, h, w]` flow; the conditioning context is `z_f` on the flow grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowDenoiser {
    pub arch: DenoiserArch,
    pub latent_channels: usize,
    pub activation: AdapterActivation,
    pub prediction: Prediction,
    pub schedule: NoiseSchedule,
}

impl EpsModel for FlowDenoiser {
    fn arch(&self) -> &DenoiserArch {
        &self.arch
    }

    fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x_t: Var, t: &[usize], cond: &Conditioning<T>) -> Var {
        let z = ctx.g.input(cond.context.clone());
        let c = latent_adapter(ctx, z, self.latent_channels, self.activation);
        let out = denoise_with_context(ctx, &self.arch, x_t, c, t, &cond.text);
        noise_from_output(ctx, out, x_t, t, self.prediction, &self.schedule)
    }
}

/// Adapter output for a first-frame latent `[N, C, h, w]`, as `[N, 2, h, w]`.
pub fn flow_condition(z_f: &Array4<f32>, params: &ParamStore<f32>, act: AdapterActivation) -> Result<Array4<f32>> {
    let w = params
        .get("latent_adapter.w")
        .ok_or_else(|| Error::InvalidArgument("parameters have no latent adapter".into()))?;
    let c = z_f.dim().1;
    if w.shape()[1] != c {
        return Err(Error::Shape(format!(
            "adapter expects {} latent channels, got {c}",
            w.shape()[1]
        )));
    }
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, params).frozen();
    let x = channel_major(z_f);
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    let xv = ctx.g.input(x.reshape(&shape));
    let y = latent_adapter(&mut ctx, xv, c, act);
    let out = g.value(y).clone();
    let s = out.shape()[1..].to_vec();
    frame_major(&out.reshape(&s))
}

fn check_geometry(seq: &FrameSequence, hw: (usize, usize)) -> Result<()> {
    if (seq.height(), seq.width()) != hw {
        return Err(Error::Shape(format!(
            "frames are {}x{}, model expects {}x{}",
            seq.height(),
            seq.width(),
            hw.0,
            hw.1
        )));
    }
    Ok(())
}

/// `z_f` resampled to the flow grid, channel-major `[C, N, h, w]`.
pub fn first_frame_context(first: &FrameSequence, cfg: &FlowPredictorConfig) -> Result<Tensor<f32>> {
    check_geometry(first, cfg.frame_hw)?;
    let z = replicate_first_frame_latent(first, cfg.n_frames, &cfg.codec)?;
    let (h, w) = cfg.flow_latent_hw;
    Ok(channel_major(&resize_tensor(&z.data, h, w)))
}

/// Reference flow at native resolution, resampled to the flow grid with frame 0 zeroed.
pub fn prepare_flow_target(seq: &FrameSequence, cfg: &FlowPredictorConfig) -> Result<FlowField> {
    let seq = if seq.n_frames() == cfg.n_frames {
        seq.clone()
    } else {
        sample_frames(seq, cfg.n_frames)?
    };
    let native = estimate_flow(&seq, &cfg.estimator)?;
    let (h, w) = cfg.flow_latent_hw;
    let mut f = resample_flow(&native, h, w)?;
    f.data.index_axis_mut(Axis(0), 0).fill(0.0);
    f.resolution = ResolutionTag::Latent;
    Ok(f)
}

fn text_tensor(prompt: &str, dim: usize) -> Tensor<f32> {
    Tensor::from_vec(&[dim], embed_prompt(prompt, dim))
}

/// Training item: scaled latent flow and its conditioning.
pub fn flow_example(
    target: &FlowField,
    first: &FrameSequence,
    prompt: &str,
    cfg: &FlowPredictorConfig,
) -> Result<(Tensor<f32>, Conditioning<f32>)> {
    let mut x0 = channel_major(&target.data);
    if x0.shape() != cfg.flow_shape() {
        return Err(Error::Shape(format!(
            "flow target {:?} does not match {:?}",
            x0.shape(),
            cfg.flow_shape()
        )));
    }
    x0.scale(cfg.flow_scale);
    let cond = Conditioning::new(first_frame_context(first, cfg)?, text_tensor(prompt, cfg.arch.cond_dim));
    Ok((x0, cond))
}

/// Estimates targets for `(clip, prompt)` pairs and builds the training set.
pub fn build_flow_dataset(
    clips: &[(FrameSequence, String)],
    cfg: &FlowPredictorConfig,
) -> Result<Vec<(Tensor<f32>, Conditioning<f32>)>> {
    cfg.validate()?;
    clips
        .par_iter()
        .map(|(seq, prompt)| {
            let target = prepare_flow_target(seq, cfg)?;
            flow_example(&target, &seq.single(0), prompt, cfg)
        })
        .collect()
}

/// A configured, parameterised flow predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowPredictor {
    pub cfg: FlowPredictorConfig,
    pub params: ParamStore<f32>,
}

impl FlowPredictor {
    pub fn init(cfg: FlowPredictorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let [_, n, h, w] = cfg.flow_shape();
        let c = cfg.codec.latent_channels();
        let cond = Conditioning::new(Tensor::zeros(&[c, n, h, w]), Tensor::zeros(&[cfg.arch.cond_dim]));
        let params = cfg.model().init_params(&cfg.flow_shape(), &cond, seed)?;
        Ok(Self { cfg, params })
    }

    pub fn meta(&self) -> serde_json::Value {
        serde_json::json!({ "model": FLOW_MODEL_KIND, "config": self.cfg })
    }

    /// Samples latent flow `[N, 2, h, w]` for a first frame; frame 0 is exactly zero.
    pub fn predict(&self, first: &FrameSequence, prompt: &str, seed: u64) -> Result<FlowField> {
        let cond = Conditioning::new(
            first_frame_context(first, &self.cfg)?,
            text_tensor(prompt, self.cfg.arch.cond_dim),
        );
        let sched = NoiseSchedule::from_config(&self.cfg.schedule)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = sample(
            &self.cfg.model(),
            &self.params,
            &cond,
            &self.cfg.flow_shape(),
            &sched,
            &self.cfg.sampler,
            &mut rng,
        )?;
        x.scale(1.0 / self.cfg.flow_scale);
        let mut data = frame_major(&x)?;
        data.index_axis_mut(Axis(0), 0).fill(0.0);
        FlowField::new(data, ResolutionTag::Latent)
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
        let ck = read_checkpoint(path)?;
        Self::from_checkpoint(ck)
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.meta["model"] != FLOW_MODEL_KIND {
            return Err(Error::Format(format!(
                "checkpoint holds `{}`, not a flow predictor",
                ck.meta["model"]
            )));
        }
        let cfg: FlowPredictorConfig = serde_json::from_value(ck.meta["config"].clone())?;
        cfg.validate()?;
        Ok(Self { cfg, params: ck.params })
    }
}

/// Trains a fresh predictor; returns it with the per-step loss curve.
pub fn train_flow_predictor(
    data: &[(Tensor<f32>, Conditioning<f32>)],
    cfg: &FlowPredictorConfig,
    train_cfg: &TrainConfig,
) -> Result<(FlowPredictor, Vec<f32>)> {
    let init = FlowPredictor::init(cfg.clone(), train_cfg.seed)?;
    let sched = NoiseSchedule::from_config(&cfg.schedule)?;
    let meta = init.meta();
    let out = train(&cfg.model(), init.params, &data.to_vec(), &sched, train_cfg, &meta)?;
    Ok((
        FlowPredictor {
            cfg: cfg.clone(),
            params: out.params,
        },
        out.losses,
    ))
}
