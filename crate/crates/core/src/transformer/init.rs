use super::config::ModelConfig;
use crate::error::Result;
use crate::tensor::{ModelParams, RngStream, Tensor};

pub(crate) fn layer_name(layer: usize, part: &str) -> String {
    format!("layers.{layer}.{part}")
}

pub const TOKEN_EMBEDDING: &str = "embed.tokens";
pub const POSITION_EMBEDDING: &str = "embed.positions";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

/// Random initial parameters. Matrices are Gaussian with standard deviation
/// `1/sqrt(fan_in)`, embeddings are Gaussian with standard deviation 0.5,
/// biases start at zero and layer-norm gains at one.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = RngStream::new(seed, 0x696e_6974);
    let (d, f) = (cfg.hidden_size, cfg.ffn_size);
    let mut p = ModelParams::new();

    p.insert(
        TOKEN_EMBEDDING,
        gaussian(&mut rng, &[cfg.vocab_size, d], 0.5),
    );
    p.insert(
        POSITION_EMBEDDING,
        gaussian(&mut rng, &[cfg.max_len, d], 0.5),
    );
    for layer in 0..cfg.num_layers {
        let std_d = 1.0 / (d as f64).sqrt();
        for w in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
            p.insert(layer_name(layer, w), gaussian(&mut rng, &[d, d], std_d));
        }
        p.insert(
            layer_name(layer, "ffn.w1"),
            gaussian(&mut rng, &[d, f], std_d),
        );
        p.insert(layer_name(layer, "ffn.b1"), Tensor::zeros(&[f]));
        p.insert(
            layer_name(layer, "ffn.w2"),
            gaussian(&mut rng, &[f, d], 1.0 / (f as f64).sqrt()),
        );
        p.insert(layer_name(layer, "ffn.b2"), Tensor::zeros(&[d]));
        for ln in ["ln1", "ln2"] {
            p.insert(layer_name(layer, &format!("{ln}.gain")), Tensor::ones(&[d]));
            p.insert(
                layer_name(layer, &format!("{ln}.bias")),
                Tensor::zeros(&[d]),
            );
        }
    }
    p.insert(
        HEAD_WEIGHT,
        gaussian(&mut rng, &[d, cfg.num_classes], 1.0 / (d as f64).sqrt()),
    );
    p.insert(HEAD_BIAS, Tensor::zeros(&[cfg.num_classes]));
    Ok(p)
}

fn gaussian(rng: &mut RngStream, shape: &[usize], std: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.normal() * std;
    }
    t
}

/// Checks that every block expected by `cfg` is present with the right shape.
pub fn check_params(cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    let reference = init_shapes(cfg);
    for (name, shape) in &reference {
        let t = params.get(name)?;
        if t.shape() != shape.as_slice() {
            return Err(crate::Error::ShapeMismatch {
                op: "check_params",
                left: t.shape().to_vec(),
                right: shape.clone(),
            });
        }
        if !t.is_finite() {
            return Err(crate::Error::NonFinite("check_params"));
        }
    }
    Ok(())
}

fn init_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f) = (cfg.hidden_size, cfg.ffn_size);
    let mut v = vec![
        (TOKEN_EMBEDDING.to_string(), vec![cfg.vocab_size, d]),
        (POSITION_EMBEDDING.to_string(), vec![cfg.max_len, d]),
        (HEAD_WEIGHT.to_string(), vec![d, cfg.num_classes]),
        (HEAD_BIAS.to_string(), vec![cfg.num_classes]),
    ];
    for layer in 0..cfg.num_layers {
        for w in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
            v.push((layer_name(layer, w), vec![d, d]));
        }
        v.push((layer_name(layer, "ffn.w1"), vec![d, f]));
        v.push((layer_name(layer, "ffn.b1"), vec![f]));
        v.push((layer_name(layer, "ffn.w2"), vec![f, d]));
        v.push((layer_name(layer, "ffn.b2"), vec![d]));
        for part in ["ln1.gain", "ln1.bias", "ln2.gain", "ln2.bias"] {
            v.push((layer_name(layer, part), vec![d]));
        }
    }
    v
}
