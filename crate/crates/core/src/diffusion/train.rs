use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forward_diffuse_batch, write_checkpoint, Checkpoint, Conditioning, EpsModel, NoiseSchedule};
use crate::nn::{collect_grads, randn, Ctx, Graph, Optimizer, OptimizerKind, ParamStore, Real, Tensor};
use crate::{Error, Result};

/// Mean squared error between `noise` and the model's prediction on the noised batch,
/// with gradients for every parameter in `params`.
///
/// `x0` and `noise` are `[B, C, N, h, w]`; `t` holds one timestep per batch item.
pub fn loss_eps<T: Real, M: EpsModel>(
    model: &M,
    params: &ParamStore<T>,
    x0: &Tensor<T>,
    t: &[usize],
    noise: &Tensor<T>,
    cond: &Conditioning<T>,
    sched: &NoiseSchedule,
) -> Result<(T, ParamStore<T>)> {
    let xt = forward_diffuse_batch(x0, t, noise, sched)?;
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, params);
    let xv = ctx.g.input(xt);
    let pred = model.forward(&mut ctx, xv, t, cond);
    let target = ctx.g.input(noise.clone());
    let loss = ctx.g.mse(pred, target);
    let bound = ctx.into_bound();
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    let grads = g.backward(loss);
    Ok((value, collect_grads(params, &bound, grads)))
}

/// Indexable training set of `(x0, conditioning)` items without a batch axis.
pub trait Dataset {
    fn len(&self) -> usize;
    fn item(&self, index: usize) -> Result<(Tensor<f32>, Conditioning<f32>)>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Dataset for Vec<(Tensor<f32>, Conditioning<f32>)> {
    fn len(&self) -> usize {
        <[_]>::len(self)
    }

    fn item(&self, index: usize) -> Result<(Tensor<f32>, Conditioning<f32>)> {
        Ok(self[index].clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f32,
    /// Linear ramp from 0 to `lr` over this many steps.
    pub warmup_steps: usize,
    /// Cosine decay to zero after warmup.
    pub cosine_decay: bool,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub grad_clip: Option<f32>,
    pub optimizer: OptimizerKind,
    /// Written at the end and on divergence.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            warmup_steps: 0,
            cosine_decay: false,
            steps: 100_000,
            batch_size: 4,
            seed: 0,
            grad_clip: Some(1.0),
            optimizer: OptimizerKind::default(),
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    /// Fine-tuning learning rate.
    pub fn fine_tune() -> Self {
        Self {
            lr: 1e-5,
            steps: 30_000,
            ..Self::default()
        }
    }

    /// Small-model schedule that converges in minutes on a single core.
    pub fn desk(steps: usize, seed: u64) -> Self {
        Self {
            lr: 2e-3,
            optimizer: OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            warmup_steps: steps / 20,
            cosine_decay: true,
            steps,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok =
            self.lr >= 0.0 && self.lr.is_finite() && self.batch_size > 0 && self.grad_clip.map_or(true, |c| c > 0.0);
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f32 {
        let warm = if self.warmup_steps > 0 && step < self.warmup_steps {
            (step + 1) as f32 / self.warmup_steps as f32
        } else {
            1.0
        };
        let decay = if self.cosine_decay && self.steps > self.warmup_steps {
            let p = step.saturating_sub(self.warmup_steps) as f32 / (self.steps - self.warmup_steps) as f32;
            0.5 * (1.0 + (std::f32::consts::PI * p.min(1.0)).cos())
        } else {
            1.0
        };
        self.lr * warm * decay
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamStore<f32>,
    /// One entry per step.
    pub losses: Vec<f32>,
}

/// Trains `params` in place on `data`. Batches come from seeded per-epoch shuffles;
/// timesteps are uniform; `meta` is stored in the checkpoint.
pub fn train<M: EpsModel, D: Dataset + ?Sized>(
    model: &M,
    mut params: ParamStore<f32>,
    data: &D,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    meta: &serde_json::Value,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.grad_clip);
    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(cfg.steps);
    let save = |params: &ParamStore<f32>, step: usize| -> Result<()> {
        if let Some(path) = &cfg.checkpoint {
            let ck = Checkpoint {
                meta: meta.clone(),
                seed: cfg.seed,
                step: step as u64,
                params: params.clone(),
            };
            write_checkpoint(path, &ck)?;
        }
        Ok(())
    };
    for step in 0..cfg.steps {
        let mut xs = Vec::with_capacity(cfg.batch_size);
        let mut cs = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
            }
            let (x, c) = data.item(order.pop().expect("refilled"))?;
            xs.push(x);
            cs.push(c);
        }
        let x0 = Tensor::stack(&xs.iter().collect::<Vec<_>>());
        let cond = Conditioning::stack(&cs.iter().collect::<Vec<_>>())?;
        let t: Vec<usize> = (0..cfg.batch_size).map(|_| rng.gen_range(0..sched.steps())).collect();
        let noise = randn::<f32>(&mut rng, x0.shape());
        let (loss, grads) = match loss_eps(model, &params, &x0, &t, &noise, &cond, sched) {
            Ok(r) => r,
            Err(Error::Numeric(_)) => {
                save(&params, step)?;
                return Err(Error::Diverged { step, loss: f32::NAN });
            }
            Err(e) => return Err(e),
        };
        let last_good = params.clone();
        let norm = opt.step(&mut params, &grads, cfg.lr_at(step));
        if !norm.is_finite() || !params.is_finite() {
            save(&last_good, step)?;
            return Err(Error::Diverged { step, loss });
        }
        losses.push(loss);
        if step % 100 == 0 {
            log::debug!("step {step} loss {loss:.5} grad {norm:.3}");
        }
    }
    save(&params, cfg.steps)?;
    Ok(TrainOutcome { params, losses })
}
