//! Minimal dense-network engine.

mod adam;
pub mod autodiff;
mod matrix;
mod mlp;

pub use adam::{adam_step, clip_grad_norm, global_norm, AdamState};
pub use matrix::Matrix;
pub use mlp::{Activation, Forward, ForwardTape, Layer, LayerGradient, Mlp, MlpGradients};
