pub mod benchmark;
pub mod codec;
pub mod diffusion;
pub mod error;
pub mod flow_predictor;
pub mod nn;
pub mod optflow;
pub mod oracle;
pub mod pipeline;
pub mod scoring;
pub mod text;
pub mod video;
pub mod video_predictor;

pub use error::{Error, Result};
