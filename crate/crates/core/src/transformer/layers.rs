//! Attention, feed-forward and dropout-site plumbing for one encoder layer.

use std::collections::BTreeMap;

use super::config::{AttentionCapture, ModelConfig, PAD_SCORE};
use super::init::layer_name;
use crate::error::{Error, Result};
use crate::tensor::{kernels, GradientTape, ModelParams, RngStream, Tensor, Var};

/// Samples and records dropout masks for one forward pass. Without a random
/// stream every site is the identity.
#[derive(Debug)]
pub struct DropoutSites<'a> {
    rate: f64,
    rng: Option<&'a mut RngStream>,
    masks: BTreeMap<String, Tensor>,
}

impl<'a> DropoutSites<'a> {
    pub fn new(rate: f64, rng: Option<&'a mut RngStream>) -> Result<Self> {
        kernels::check_rate(rate)?;
        Ok(Self {
            rate,
            rng,
            masks: BTreeMap::new(),
        })
    }

    /// No dropout anywhere.
    pub fn inference() -> Self {
        Self {
            rate: 0.0,
            rng: None,
            masks: BTreeMap::new(),
        }
    }

    pub fn apply(&mut self, tape: &mut GradientTape, x: Var, site: String) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        let (rate, mask) = match self.rng.as_deref_mut() {
            Some(rng) if self.rate > 0.0 => {
                (self.rate, kernels::dropout_mask(&shape, self.rate, rng)?)
            }
            _ => (0.0, Tensor::ones(&shape)),
        };
        let out = tape.dropout_with_mask(x, mask.clone(), rate)?;
        self.masks.insert(site, mask);
        Ok(out)
    }

    pub fn into_masks(self) -> BTreeMap<String, Tensor> {
        self.masks
    }
}

/// Tape handles for one layer's parameter blocks.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
}

impl LayerVars {
    pub fn register(tape: &mut GradientTape, params: &ModelParams, layer: usize) -> Result<Self> {
        let mut v = |part: &str| params.var(tape, &layer_name(layer, part));
        Ok(Self {
            wq: v("attn.wq")?,
            wk: v("attn.wk")?,
            wv: v("attn.wv")?,
            wo: v("attn.wo")?,
            w1: v("ffn.w1")?,
            b1: v("ffn.b1")?,
            w2: v("ffn.w2")?,
            b2: v("ffn.b2")?,
            ln1_gain: v("ln1.gain")?,
            ln1_bias: v("ln1.bias")?,
            ln2_gain: v("ln2.gain")?,
            ln2_bias: v("ln2.bias")?,
        })
    }
}

/// Scaled dot-product attention. Keys at positions `>= valid_len` receive a
/// large negative score. Returns the output and the attention probabilities.
pub fn attention(
    tape: &mut GradientTape,
    q: Var,
    k: Var,
    v: Var,
    valid_len: usize,
) -> Result<(Var, Var)> {
    let (lq, dq) = tape.value(q).dims2()?;
    let (lk, dk) = tape.value(k).dims2()?;
    let (lv, _) = tape.value(v).dims2()?;
    if dq != dk || lk != lv {
        return Err(Error::ShapeMismatch {
            op: "attention",
            left: tape.value(q).shape().to_vec(),
            right: tape.value(k).shape().to_vec(),
        });
    }
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let mut scores = tape.scale(scores, 1.0 / (dk as f64).sqrt())?;
    if valid_len < lk {
        let mut mask = Tensor::zeros(&[lq, lk]);
        for r in 0..lq {
            for c in valid_len..lk {
                mask.data_mut()[r * lk + c] = PAD_SCORE;
            }
        }
        scores = tape.add_const(scores, &mask)?;
    }
    let probs = tape.row_softmax(scores)?;
    let out = tape.matmul(probs, v)?;
    Ok((out, probs))
}

/// Convenience wrapper over [`attention`] for plain tensors without padding.
pub fn attention_values(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut tape = GradientTape::new();
    let (q, k, v) = (
        tape.constant(q.clone()),
        tape.constant(k.clone()),
        tape.constant(v.clone()),
    );
    let len = tape.value(k).dims2()?.0;
    let (out, a) = attention(&mut tape, q, k, v, len)?;
    Ok((tape.value(out).clone(), tape.value(a).clone()))
}

/// Multi-head self-attention. Each head works on a `d/h`-wide column slice of
/// the Q/K/V projections; head outputs are concatenated and projected by
/// `W^o`. Returns the output and one captured probability matrix per head.
pub fn multi_head_attention(
    tape: &mut GradientTape,
    x: Var,
    layer: &LayerVars,
    cfg: &ModelConfig,
    valid_len: usize,
    sites: &mut DropoutSites<'_>,
    site_prefix: &str,
) -> Result<(Var, Vec<Var>)> {
    if cfg.num_heads == 0 || cfg.hidden_size % cfg.num_heads != 0 {
        return Err(Error::Config(format!(
            "hidden_size {} is not divisible by num_heads {}",
            cfg.hidden_size, cfg.num_heads
        )));
    }
    let (l, d) = tape.value(x).dims2()?;
    if d != cfg.hidden_size {
        return Err(Error::ShapeMismatch {
            op: "multi_head_attention",
            left: vec![l, d],
            right: vec![l, cfg.hidden_size],
        });
    }
    let dk = cfg.head_dim();
    let q = tape.matmul(x, layer.wq)?;
    let k = tape.matmul(x, layer.wk)?;
    let v = tape.matmul(x, layer.wv)?;

    let mut outs = Vec::with_capacity(cfg.num_heads);
    let mut heads = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let qh = tape.block(q, 0, l, h * dk, dk)?;
        let kh = tape.block(k, 0, l, h * dk, dk)?;
        let vh = tape.block(v, 0, l, h * dk, dk)?;
        let (_, probs) = attention(tape, qh, kh, vh, valid_len)?;
        let dropped = sites.apply(tape, probs, format!("{site_prefix}.head{h}"))?;
        heads.push(match cfg.attention_capture {
            AttentionCapture::PreDropout => probs,
            AttentionCapture::PostDropout => dropped,
        });
        outs.push(tape.matmul(dropped, vh)?);
    }
    let concat = if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)?
    };
    let out = tape.matmul(concat, layer.wo)?;
    Ok((out, heads))
}

/// `max(0, x W1 + b1) W2 + b2` with dropout after the activation.
pub fn feed_forward(
    tape: &mut GradientTape,
    x: Var,
    layer: &LayerVars,
    sites: &mut DropoutSites<'_>,
    site: &str,
) -> Result<Var> {
    let h = tape.matmul(x, layer.w1)?;
    let h = tape.add_row_bias(h, layer.b1)?;
    let h = tape.relu(h)?;
    let h = sites.apply(tape, h, site.to_string())?;
    let o = tape.matmul(h, layer.w2)?;
    tape.add_row_bias(o, layer.b2)
}
