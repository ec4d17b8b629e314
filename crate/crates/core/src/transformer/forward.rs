use std::collections::BTreeMap;

use super::config::{ModelConfig, LAYER_NORM_EPS};
use super::init::{HEAD_BIAS, HEAD_WEIGHT, POSITION_EMBEDDING, TOKEN_EMBEDDING};
use super::layers::{feed_forward, multi_head_attention, DropoutSites, LayerVars};
use crate::error::{Error, Result};
use crate::tensor::{GradientTape, ModelParams, RngStream, Tensor, Var};

/// Everything one dropout-sampled pass produced, as handles into the tape the
/// pass was recorded on.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Per layer, the normalized output fed to the next layer (`l x d`).
    pub hidden_states: Vec<Var>,
    /// Per layer, per head, the `l x l` attention probabilities.
    pub attentions: Vec<Vec<Var>>,
    /// Classifier logits, shape `[C]`.
    pub logits: Var,
    pub masks: BTreeMap<String, Tensor>,
    pub pass_id: u64,
    /// Number of non-padding positions.
    pub valid_len: usize,
}

impl ForwardTrace {
    /// Builds a trace from literal values recorded as tape constants.
    pub fn from_values(
        tape: &mut GradientTape,
        hidden_states: Vec<Tensor>,
        attentions: Vec<Vec<Tensor>>,
        logits: Tensor,
        valid_len: usize,
    ) -> Self {
        ForwardTrace {
            hidden_states: hidden_states
                .into_iter()
                .map(|t| tape.constant(t))
                .collect(),
            attentions: attentions
                .into_iter()
                .map(|layer| layer.into_iter().map(|t| tape.constant(t)).collect())
                .collect(),
            logits: tape.constant(logits),
            masks: BTreeMap::new(),
            pass_id: 0,
            valid_len,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_states.len()
    }

    pub fn num_heads(&self) -> usize {
        self.attentions.first().map_or(0, Vec::len)
    }
}

/// Runs the encoder on `tokens`, padding to `cfg.max_len`. With `rng` set,
/// every dropout site samples a mask from it; with `None` the pass is
/// deterministic inference.
pub fn forward_pass(
    tape: &mut GradientTape,
    tokens: &[usize],
    params: &ModelParams,
    cfg: &ModelConfig,
    rng: Option<&mut RngStream>,
    pass_id: u64,
) -> Result<ForwardTrace> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("empty token sequence".into()));
    }
    if tokens.len() > cfg.max_len {
        return Err(Error::InvalidArgument(format!(
            "sequence length {} exceeds max_len {}",
            tokens.len(),
            cfg.max_len
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::OutOfRange {
            what: "vocabulary",
            index: bad,
            bound: cfg.vocab_size,
        });
    }
    let valid_len = tokens.len();
    let l = cfg.max_len;
    let mut sites = DropoutSites::new(cfg.dropout_rate, rng)?;

    let ids: Vec<Option<usize>> = (0..l).map(|i| tokens.get(i).copied()).collect();
    let tok_table = params.var(tape, TOKEN_EMBEDDING)?;
    let pos_table = params.var(tape, POSITION_EMBEDDING)?;
    let tok = tape.gather_rows(tok_table, &ids)?;
    let x = tape.add(tok, pos_table)?;
    let mut x = sites.apply(tape, x, "embed".into())?;

    let mut hidden_states = Vec::with_capacity(cfg.num_layers);
    let mut attentions = Vec::with_capacity(cfg.num_layers);
    for layer in 0..cfg.num_layers {
        let lv = LayerVars::register(tape, params, layer)?;
        let prefix = format!("layers.{layer}");

        let (attn, heads) = multi_head_attention(
            tape,
            x,
            &lv,
            cfg,
            valid_len,
            &mut sites,
            &format!("{prefix}.attn.probs"),
        )?;
        let attn = sites.apply(tape, attn, format!("{prefix}.attn.out"))?;
        let res = tape.add(x, attn)?;
        let x1 = tape.layer_norm(res, lv.ln1_gain, lv.ln1_bias, LAYER_NORM_EPS)?;

        let ffn = feed_forward(tape, x1, &lv, &mut sites, &format!("{prefix}.ffn.act"))?;
        let ffn = sites.apply(tape, ffn, format!("{prefix}.ffn.out"))?;
        let res = tape.add(x1, ffn)?;
        x = tape.layer_norm(res, lv.ln2_gain, lv.ln2_bias, LAYER_NORM_EPS)?;

        hidden_states.push(x);
        attentions.push(heads);
    }

    let pooled = tape.mean_rows(x, valid_len)?;
    let w = params.var(tape, HEAD_WEIGHT)?;
    let b = params.var(tape, HEAD_BIAS)?;
    let logits = tape.matmul(pooled, w)?;
    let logits = tape.add_row_bias(logits, b)?;
    let logits = tape.reshape(logits, vec![cfg.num_classes])?;

    Ok(ForwardTrace {
        hidden_states,
        attentions,
        logits,
        masks: sites.into_masks(),
        pass_id,
        valid_len,
    })
}

/// Inference-mode logits as a plain tensor.
pub fn predict_logits(tokens: &[usize], params: &ModelParams, cfg: &ModelConfig) -> Result<Tensor> {
    let mut tape = GradientTape::new();
    let trace = forward_pass(&mut tape, tokens, params, &cfg.inference(), None, 0)?;
    Ok(tape.value(trace.logits).clone())
}
