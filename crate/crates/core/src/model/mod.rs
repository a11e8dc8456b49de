//! The Wave Network classifier.
//!
//! `embed → +positional encoding → n_layers × block → masked mean-pool →
//! linear → softmax cross-entropy`, where each block is a pre-norm residual
//! wave sublayer followed by a pre-norm residual feed-forward sublayer.

mod config;
mod forward;
mod params;
mod positional;

pub use config::ModelConfig;
pub use forward::{
    block_forward, classify, embed, forward, linear, loss_and_gradients, model_forward,
    wave_layer_forward, wave_overlay, ForwardCtx, ForwardOutput, SequenceBatch,
};
pub use params::{BoundParams, LayerParams, LayerVars, Linear, LinearVars, ModelParams, Norm, NormVars};
pub use positional::positional_encoding;

#[cfg(test)]
mod tests;
