use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where attention probabilities are captured for the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionCapture {
    /// Post-softmax, before attention-probability dropout.
    #[default]
    PreDropout,
    /// After attention-probability dropout.
    PostDropout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
    #[serde(default)]
    pub attention_capture: AttentionCapture,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Additive score for masked (padding) keys.
pub const PAD_SCORE: f64 = -1e9;

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ffn_size", self.ffn_size),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden_size % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Copy with dropout disabled, used for inference.
    pub fn inference(&self) -> ModelConfig {
        ModelConfig {
            dropout_rate: 0.0,
            ..self.clone()
        }
    }
}
