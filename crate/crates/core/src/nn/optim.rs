use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    /// Heavy-ball gradient descent.
    Momentum {
        momentum: f32,
    },
    Adam {
        beta1: f32,
        beta2: f32,
        eps: f32,
    },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Momentum { momentum: 0.9 }
    }
}

/// Optimizer state for an `f32` parameter tree. Updates run sequentially in
/// name order so results are bit-reproducible.
pub struct Optimizer {
    kind: OptimizerKind,
    grad_clip: Option<f32>,
    m: ParamStore<f32>,
    v: ParamStore<f32>,
    step: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, grad_clip: Option<f32>) -> Self {
        Self {
            kind,
            grad_clip,
            m: ParamStore::new(),
            v: ParamStore::new(),
            step: 0,
        }
    }

    /// Applies one update; returns the gradient norm before clipping.
    ///
    /// Parameters whose name starts with `buffer.` are never updated.
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &ParamStore<f32>, lr: f32) -> f32 {
        self.step += 1;
        let norm = grads
            .iter()
            .filter(|(k, _)| !k.starts_with("buffer."))
            .map(|(_, g)| g.data().iter().map(|v| f64::from(*v) * f64::from(*v)).sum::<f64>())
            .sum::<f64>()
            .sqrt() as f32;
        let clip = match self.grad_clip {
            Some(c) if norm > c && norm > 0.0 => c / norm,
            _ => 1.0,
        };
        for (name, p) in params.iter_mut() {
            if name.starts_with("buffer.") {
                continue;
            }
            let Some(g) = grads.get(name) else { continue };
            if self.m.get(name).is_none() {
                self.m.insert(name.clone(), Tensor::zeros(p.shape()));
                self.v.insert(name.clone(), Tensor::zeros(p.shape()));
            }
            let m = self.m.get_mut(name).expect("moment").data_mut();
            match self.kind {
                OptimizerKind::Momentum { momentum } => {
                    for ((pv, gv), mv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()) {
                        *mv = momentum * *mv + clip * gv;
                        *pv -= lr * *mv;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let v = self.v.get_mut(name).expect("moment").data_mut();
                    let bc1 = 1.0 - beta1.powi(self.step as i32);
                    let bc2 = 1.0 - beta2.powi(self.step as i32);
                    for (((pv, gv), mv), vv) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        let gc = clip * gv;
                        *mv = beta1 * *mv + (1.0 - beta1) * gc;
                        *vv = beta2 * *vv + (1.0 - beta2) * gc * gc;
                        *pv -= lr * (*mv / bc1) / ((*vv / bc2).sqrt() + eps);
                    }
                }
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momentum_matches_hand_update() {
        let mut p = ParamStore::new();
        p.insert("a", Tensor::from_vec(&[2], vec![1.0f32, -1.0]));
        let mut g = ParamStore::new();
        g.insert("a", Tensor::from_vec(&[2], vec![0.5f32, 0.5]));
        let mut opt = Optimizer::new(OptimizerKind::Momentum { momentum: 0.9 }, None);
        opt.step(&mut p, &g, 0.1);
        opt.step(&mut p, &g, 0.1);
        // v1 = 0.5, v2 = 0.95; p = 1 - 0.1*(0.5+0.95)
        assert!((p.get("a").unwrap().data()[0] - (1.0 - 0.145)).abs() < 1e-6);
    }

    #[test]
    fn clipping_bounds_the_step() {
        let mut p = ParamStore::new();
        p.insert("a", Tensor::from_vec(&[1], vec![0.0f32]));
        let mut g = ParamStore::new();
        g.insert("a", Tensor::from_vec(&[1], vec![100.0f32]));
        let mut opt = Optimizer::new(OptimizerKind::Momentum { momentum: 0.0 }, Some(1.0));
        let n = opt.step(&mut p, &g, 1.0);
        assert_eq!(n, 100.0);
        assert!((p.get("a").unwrap().data()[0] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn buffers_and_zero_lr_are_untouched() {
        let mut p = ParamStore::new();
        p.insert("buffer.scale", Tensor::from_vec(&[1], vec![2.0f32]));
        p.insert("w", Tensor::from_vec(&[1], vec![3.0f32]));
        let before = p.clone();
        let mut g = ParamStore::new();
        g.insert("buffer.scale", Tensor::from_vec(&[1], vec![1.0f32]));
        g.insert("w", Tensor::from_vec(&[1], vec![1.0f32]));
        let mut opt = Optimizer::new(OptimizerKind::default(), Some(1.0));
        opt.step(&mut p, &g, 0.0);
        assert_eq!(p, before);
        opt.step(&mut p, &g, 0.5);
        assert_eq!(p.get("buffer.scale"), before.get("buffer.scale"));
    }
}
