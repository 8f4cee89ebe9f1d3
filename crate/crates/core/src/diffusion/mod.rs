//! Denoising diffusion: noise schedule, forward process, reverse samplers,
//! the noise-prediction objective and the shared training loop.

mod checkpoint;
mod sampler;
mod schedule;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use sampler::{denoise_step, sample, sample_from, sample_with, timesteps, SamplerConfig, SamplerKind};
pub use schedule::{forward_diffuse, forward_diffuse_batch, NoiseSchedule, ScheduleConfig};
pub use train::{loss_eps, train, Dataset, TrainConfig, TrainOutcome};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{timestep_embedding, unet_forward, Ctx, DenoiserArch, Graph, ParamStore, Real, Tensor, Var};
use crate::{Error, Result};

/// Per-sample conditioning. Items carry no batch axis; batches are built with [`Conditioning::stack`].
///
/// `context` is channel-stacked with the noisy input (`[Cc, N, h, w]`), `aux` is an
/// optional model-specific tensor (the flow for video prediction) and `text` the
/// prompt embedding (`[cond_dim]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning<T> {
    pub context: Tensor<T>,
    pub aux: Option<Tensor<T>>,
    pub text: Tensor<T>,
}

impl<T: Real> Conditioning<T> {
    pub fn new(context: Tensor<T>, text: Tensor<T>) -> Self {
        Self {
            context,
            aux: None,
            text,
        }
    }

    pub fn with_aux(mut self, aux: Tensor<T>) -> Self {
        self.aux = Some(aux);
        self
    }

    /// Batches items along a new leading axis.
    pub fn stack(items: &[&Conditioning<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty conditioning batch".into()))?;
        let same = items.iter().all(|c| {
            c.context.shape() == first.context.shape()
                && c.text.shape() == first.text.shape()
                && c.aux.as_ref().map(Tensor::shape) == first.aux.as_ref().map(Tensor::shape)
        });
        if !same {
            return Err(Error::Shape("conditioning items differ in shape".into()));
        }
        let context = Tensor::stack(&items.iter().map(|c| &c.context).collect::<Vec<_>>());
        let text = Tensor::stack(&items.iter().map(|c| &c.text).collect::<Vec<_>>());
        let aux = first.aux.as_ref().map(|_| {
            Tensor::stack(
                &items
                    .iter()
                    .map(|c| c.aux.as_ref().expect("checked"))
                    .collect::<Vec<_>>(),
            )
        });
        Ok(Self { context, aux, text })
    }

    pub fn cast<U: Real>(&self) -> Conditioning<U> {
        Conditioning {
            context: self.context.cast(),
            aux: self.aux.as_ref().map(Tensor::cast),
            text: self.text.cast(),
        }
    }
}

/// A noise-prediction network over batched inputs.
pub trait EpsModel: Sync {
    fn arch(&self) -> &DenoiserArch;

    /// `x_t` is `[B, out_channels, N, h, w]`; the result has the same shape.
    fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x_t: Var, t: &[usize], cond: &Conditioning<T>) -> Var;

    /// Creates the parameter tree by running one forward pass in init mode.
    fn init_params(&self, x_shape: &[usize], cond: &Conditioning<f32>, seed: u64) -> Result<ParamStore<f32>> {
        self.arch().validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut g = Graph::new();
        let mut batch = vec![1];
        batch.extend_from_slice(x_shape);
        let cond = Conditioning::stack(&[cond])?;
        let mut ctx = Ctx::init(&mut g, &mut store, &mut rng);
        let x = ctx.g.input(Tensor::zeros(&batch));
        self.forward(&mut ctx, x, &[0], &cond);
        Ok(store)
    }
}

/// What the network's last layer estimates. The model always returns noise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    #[default]
    Noise,
    /// `v = sqrt(abar) * eps - sqrt(1 - abar) * x0`; at high noise the network then
    /// estimates `-x0` instead of a noise residual that sampling divides by `sqrt(abar)`.
    Velocity,
}

/// Converts the raw network output to a noise estimate.
pub fn noise_from_output<T: Real>(
    ctx: &mut Ctx<'_, T>,
    out: Var,
    x_t: Var,
    t: &[usize],
    prediction: Prediction,
    sched: &NoiseSchedule,
) -> Var {
    match prediction {
        Prediction::Noise => out,
        Prediction::Velocity => {
            // eps = sqrt(abar) * v + sqrt(1 - abar) * x_t, as x * (1 + k) per batch item
            let c = ctx.g.shape(out)[1];
            let per_item = |f: &dyn Fn(f64) -> f64| {
                let d: Vec<T> = t
                    .iter()
                    .flat_map(|&t| std::iter::repeat(T::lit(f(sched.alpha_bar(t)) - 1.0)).take(c))
                    .collect();
                Tensor::from_vec(&[t.len(), c], d)
            };
            let ka = ctx.g.input(per_item(&|ab| ab.sqrt()));
            let ks = ctx.g.input(per_item(&|ab| (1.0 - ab).sqrt()));
            let zero = ctx.g.input(Tensor::zeros(&[t.len(), c]));
            let v = ctx.g.scale_shift(out, ka, zero);
            let x = ctx.g.scale_shift(x_t, ks, zero);
            ctx.g.add(v, x)
        }
    }
}

/// Runs the U-Net on `concat(x_t, extra)` with the timestep and text embeddings.
pub fn denoise_with_context<T: Real>(
    ctx: &mut Ctx<'_, T>,
    arch: &DenoiserArch,
    x_t: Var,
    extra: Var,
    t: &[usize],
    text: &Tensor<T>,
) -> Var {
    let temb = ctx.g.input(timestep_embedding(t, arch.base_width));
    let text = ctx.g.input(text.clone());
    let x = ctx.g.concat(x_t, extra);
    unet_forward(ctx, arch, x, temb, text)
}

/// U-Net whose input is the noisy sample stacked with the conditioning context.
#[derive(Clone, Debug, PartialEq)]
pub struct PlainDenoiser {
    pub arch: DenoiserArch,
}

impl EpsModel for PlainDenoiser {
    fn arch(&self) -> &DenoiserArch {
        &self.arch
    }

    fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x_t: Var, t: &[usize], cond: &Conditioning<T>) -> Var {
        let extra = ctx.g.input(cond.context.clone());
        denoise_with_context(ctx, &self.arch, x_t, extra, t, &cond.text)
    }
}

/// Frame-major `[N, C, h, w]` to the channel-major `[C, N, h, w]` layout the denoiser uses.
pub fn channel_major(a: &ndarray::Array4<f32>) -> Tensor<f32> {
    let (n, c, h, w) = a.dim();
    let p = a.view().permuted_axes([1, 0, 2, 3]);
    Tensor::from_vec(&[c, n, h, w], p.iter().copied().collect())
}

/// Inverse of [`channel_major`].
pub fn frame_major(t: &Tensor<f32>) -> Result<ndarray::Array4<f32>> {
    let &[c, n, h, w] = t.shape() else {
        return Err(Error::Shape(format!("expected a 4-D tensor, got {:?}", t.shape())));
    };
    let a =
        ndarray::Array4::from_shape_vec((c, n, h, w), t.data().to_vec()).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(a.permuted_axes([1, 0, 2, 3]).as_standard_layout().into_owned())
}
