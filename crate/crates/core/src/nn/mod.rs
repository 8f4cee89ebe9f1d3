//! Minimal tensor, reverse-mode autodiff and the denoiser network.

pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod unet;

pub use graph::{ConvSpec, Gradients, Graph, Var};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{collect_grads, randn, Ctx, Init, ParamStore};
pub use tensor::{matmul, Real, Tensor};
pub use unet::{timestep_embedding, unet_forward, DenoiserArch};
