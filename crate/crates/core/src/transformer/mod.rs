//! Small transformer encoder for sequence classification that records every
//! layer's hidden states and every head's attention probabilities.

pub mod checkpoint;
mod config;
mod forward;
mod init;
pub mod layers;

pub use config::{AttentionCapture, ModelConfig, LAYER_NORM_EPS, PAD_SCORE};
pub use forward::{forward_pass, predict_logits, ForwardTrace};
pub use init::{
    check_params, init_params, HEAD_BIAS, HEAD_WEIGHT, POSITION_EMBEDDING, TOKEN_EMBEDDING,
};
pub use layers::{attention, attention_values, feed_forward, multi_head_attention, DropoutSites};
