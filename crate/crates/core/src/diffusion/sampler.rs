use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Conditioning, EpsModel, NoiseSchedule};
use crate::nn::{randn, Ctx, Graph, ParamStore, Real, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerKind {
    /// `eta = 0` is deterministic.
    Ddim { eta: f64 },
    /// Ancestral sampling with the posterior variance.
    Ddpm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Number of reverse steps; the schedule is strided when this is below its length.
    pub steps: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Ddim { eta: 0.0 },
            steps: 50,
        }
    }
}

/// Ascending timesteps visited by the sampler: `floor(i * T / S)`.
pub fn timesteps(sched: &NoiseSchedule, steps: usize) -> Result<Vec<usize>> {
    let total = sched.steps();
    if steps == 0 || steps > total {
        return Err(Error::InvalidArgument(format!(
            "sampler steps {steps} outside 1..={total}"
        )));
    }
    Ok((0..steps).map(|i| i * total / steps).collect())
}

/// One reverse update from `t` to `t_prev` (`None` means the chain ends and no noise is added).
pub fn denoise_step<T: Real>(
    x_t: &Tensor<T>,
    eps: &Tensor<T>,
    t: usize,
    t_prev: Option<usize>,
    sched: &NoiseSchedule,
    kind: SamplerKind,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    sched.check_step(t)?;
    if x_t.shape() != eps.shape() {
        return Err(Error::Shape(format!("x_t {:?} vs eps {:?}", x_t.shape(), eps.shape())));
    }
    if !eps.is_finite() {
        return Err(Error::Numeric(format!("non-finite noise prediction at step {t}")));
    }
    let ab = sched.alpha_bar(t);
    let ab_prev = match t_prev {
        Some(p) => {
            sched.check_step(p)?;
            sched.alpha_bar(p)
        }
        None => 1.0,
    };
    let (sa, s1a) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (ca, cn, sigma) = match kind {
        SamplerKind::Ddim { eta } => {
            let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)).max(0.0).sqrt();
            let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
            // x_prev = sqrt(ab_prev) * x0_hat + dir * eps
            (ab_prev.sqrt(), dir, sigma)
        }
        SamplerKind::Ddpm => {
            let beta = 1.0 - ab / ab_prev;
            let var = (1.0 - ab_prev) / (1.0 - ab) * beta;
            // posterior mean rewritten in terms of x0_hat and eps
            let mean_eps = (1.0 - ab_prev - var).max(0.0).sqrt();
            (ab_prev.sqrt(), mean_eps, var.sqrt())
        }
    };
    let noise = if sigma > 0.0 && t_prev.is_some() {
        Some(randn::<f64>(rng, x_t.shape()))
    } else {
        None
    };
    let out: Vec<T> = x_t
        .data()
        .iter()
        .zip(eps.data())
        .enumerate()
        .map(|(i, (x, e))| {
            let (x, e) = (x.to_f64().unwrap_or(f64::NAN), e.to_f64().unwrap_or(f64::NAN));
            let x0 = (x - s1a * e) / sa;
            let mut v = ca * x0 + cn * e;
            if let Some(z) = &noise {
                v += sigma * z.data()[i];
            }
            T::lit(v)
        })
        .collect();
    let out = Tensor::from_vec(x_t.shape(), out);
    if !out.is_finite() {
        return Err(Error::Numeric(format!("non-finite sample at step {t}")));
    }
    Ok(out)
}

/// Runs the reverse chain from `x_top`, asking `eps_fn(x_t, t)` for noise predictions.
pub fn sample_from<T, F>(
    mut x: Tensor<T>,
    mut eps_fn: F,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>>
where
    T: Real,
    F: FnMut(&Tensor<T>, usize) -> Result<Tensor<T>>,
{
    let ts = timesteps(sched, cfg.steps)?;
    for k in (0..ts.len()).rev() {
        let t = ts[k];
        let eps = eps_fn(&x, t)?;
        let prev = (k > 0).then(|| ts[k - 1]);
        x = denoise_step(&x, &eps, t, prev, sched, cfg.kind, rng)?;
    }
    Ok(x)
}

/// Starts from standard-normal noise of `shape`.
pub fn sample_with<T, F>(
    shape: &[usize],
    eps_fn: F,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>>
where
    T: Real,
    F: FnMut(&Tensor<T>, usize) -> Result<Tensor<T>>,
{
    let x = randn::<T>(rng, shape);
    sample_from(x, eps_fn, sched, cfg, rng)
}

/// Samples one item of shape `x_shape` (no batch axis) from a trained model.
pub fn sample<M: EpsModel>(
    model: &M,
    params: &ParamStore<f32>,
    cond: &Conditioning<f32>,
    x_shape: &[usize],
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<f32>> {
    let batch = Conditioning::stack(&[cond])?;
    let mut shape = vec![1];
    shape.extend_from_slice(x_shape);
    let out = sample_with(
        &shape,
        |x: &Tensor<f32>, t| {
            let mut g = Graph::new();
            let mut ctx = Ctx::new(&mut g, params).frozen();
            let xv = ctx.g.input(x.clone());
            let e = model.forward(&mut ctx, xv, &[t], &batch);
            Ok(g.value(e).clone())
        },
        sched,
        cfg,
        rng,
    )?;
    Ok(out.reshape(x_shape))
}
