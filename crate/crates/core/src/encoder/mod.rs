//! Transformer encoder, optionally with factorized embeddings and
//! cross-layer parameter sharing.

mod config;
mod model;
mod params;
mod pretrain;

pub use config::ModelConfig;
pub use model::{embedding_sum, encode, encode_backward, encode_cached, EncoderCache, EncoderOutput, Features, Mode, LN_EPS};
pub use params::{init_model, param_count, Gradients, LayerParams, ParamCount, ParameterSet, Tensor, INIT_STD};
pub use pretrain::{accumulate_gradients, forward, pretrain_gradients, pretrain_loss, ForwardOutput, LossBreakdown, PretrainTargets};

pub(crate) use model::dropout_mask;
pub(crate) use params::truncated_normal;
