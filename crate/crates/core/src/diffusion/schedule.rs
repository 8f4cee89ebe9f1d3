use serde::{Deserialize, Serialize};

use crate::nn::{Real, Tensor};
use crate::{Error, Result};

/// Linear beta schedule and its cumulative products.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 || !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "invalid schedule: {steps} steps, beta {beta_start}..{beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        let mut acc = 1.0;
        let alpha_bar = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bar })
    }

    pub fn from_config(cfg: &ScheduleConfig) -> Result<Self> {
        Self::linear(cfg.steps, cfg.beta_start, cfg.beta_end)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} outside 0..{}",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise`.
pub fn forward_diffuse<T: Real>(
    x0: &Tensor<T>,
    t: usize,
    noise: &Tensor<T>,
    sched: &NoiseSchedule,
) -> Result<Tensor<T>> {
    sched.check_step(t)?;
    if x0.shape() != noise.shape() {
        return Err(Error::Shape(format!(
            "x0 {:?} vs noise {:?}",
            x0.shape(),
            noise.shape()
        )));
    }
    let a = T::lit(sched.alpha_bar(t).sqrt());
    let s = T::lit((1.0 - sched.alpha_bar(t)).sqrt());
    let data = x0
        .data()
        .iter()
        .zip(noise.data())
        .map(|(x, e)| a * *x + s * *e)
        .collect();
    Ok(Tensor::from_vec(x0.shape(), data))
}

/// Per-sample forward diffusion for a batch `[B, ...]` with one timestep per sample.
pub fn forward_diffuse_batch<T: Real>(
    x0: &Tensor<T>,
    t: &[usize],
    noise: &Tensor<T>,
    sched: &NoiseSchedule,
) -> Result<Tensor<T>> {
    if x0.shape() != noise.shape() || x0.shape()[0] != t.len() {
        return Err(Error::Shape("batch diffusion shape mismatch".into()));
    }
    let inner = x0.numel() / t.len();
    let mut out = Vec::with_capacity(x0.numel());
    for (b, &tb) in t.iter().enumerate() {
        sched.check_step(tb)?;
        let a = T::lit(sched.alpha_bar(tb).sqrt());
        let s = T::lit((1.0 - sched.alpha_bar(tb)).sqrt());
        let r = b * inner..(b + 1) * inner;
        out.extend(
            x0.data()[r.clone()]
                .iter()
                .zip(&noise.data()[r])
                .map(|(x, e)| a * *x + s * *e),
        );
    }
    Ok(Tensor::from_vec(x0.shape(), out))
}
