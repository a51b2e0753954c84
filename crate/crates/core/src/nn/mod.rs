//! Minimal dense neural-network core with hand-written backward passes.

mod activation;
mod adam;
mod attention;
mod linear;
mod norm;
mod params;
mod tensor;

pub use activation::{gelu, gelu_grad, mse_loss, softmax, softmax_backward};
pub use adam::{Adam, AdamConfig};
pub use attention::{AttentionCache, FeedForward, FeedForwardCache, MultiHeadAttention};
pub use linear::Linear;
pub use norm::{
    affine_backward, affine_forward, cloud_norm_backward, cloud_norm_forward,
    cloud_norm_with_stats, layer_norm_backward, layer_norm_forward, layer_norm_normalize,
    CloudNorm, CloudNormCache, CloudNormConfig, LayerNormCache, NoiseGranularity, LAYER_NORM_EPS,
};
pub use params::{Gradients, LayerParams, ParamId, ParamStore};
pub use tensor::Tensor;

/// Training or evaluation; selects the noise mode of stochastic layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}
