//! The training objective assembled from `k` forward traces of one input:
//!
//! ```text
//! total = CE + alpha * HSR + beta * MHAR + gamma * OR
//! ```
//!
//! * `CE` sums the per-pass cross-entropies.
//! * `HSR` is the MSE between hidden states, averaged over layers.
//! * `MHAR` is the per-head attention MSE averaged over heads, then layers.
//! * `OR` is the symmetrized KL between output distributions.
//!
//! For `k > 2` every regularizer is averaged over all unordered pass pairs.
//! A term that is switched off, has weight zero, or has fewer than two passes
//! to compare is reported as exactly `0` and never enters the graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{GradientTape, Var};
use crate::transformer::ForwardTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
    };

    pub fn uniform(w: f64) -> Self {
        LossWeights {
            alpha: w,
            beta: w,
            gamma: w,
        }
    }

    /// `ce + alpha*hsr + beta*mhar + gamma*or`, skipping zero-weight terms in
    /// the same way the training graph does.
    pub fn combine(&self, ce: f64, hsr: f64, mhar: f64, or: f64) -> f64 {
        let mut total = ce;
        for (w, v) in [(self.alpha, hsr), (self.beta, mhar), (self.gamma, or)] {
            if w > 0.0 {
                total += v * w;
            }
        }
        total
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights::uniform(0.1)
    }
}

/// Which layers the hidden-state term compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HsrLayers {
    #[default]
    All,
    Last,
}

/// Per-term on/off switches used by the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermSwitches {
    pub hsr_on: bool,
    pub mhar_on: bool,
    pub or_on: bool,
    #[serde(default)]
    pub hsr_layers: HsrLayers,
}

impl Default for TermSwitches {
    fn default() -> Self {
        TermSwitches {
            hsr_on: true,
            mhar_on: true,
            or_on: true,
            hsr_layers: HsrLayers::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossBreakdown {
    pub ce: f64,
    pub hsr: f64,
    pub mhar: f64,
    pub or_: f64,
    pub total: f64,
    pub per_layer_hsr: Vec<f64>,
    pub per_layer_mhar: Vec<f64>,
}

#[derive(Serialize)]
struct LogLine {
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    step: u64,
    ce: f64,
    hsr: f64,
    mhar: f64,
    or: f64,
    total: f64,
}

impl LossBreakdown {
    /// One training-log record, keys in the order
    /// `seed` (when given), `step`, `ce`, `hsr`, `mhar`, `or`, `total`.
    pub fn log_line(&self, seed: Option<u64>, step: u64) -> String {
        serde_json::to_string(&LogLine {
            seed,
            step,
            ce: self.ce,
            hsr: self.hsr,
            mhar: self.mhar,
            or: self.or_,
            total: self.total,
        })
        .expect("plain struct serializes")
    }

    /// Element-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let n = items.len() as f64;
        let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        let avg_vec = |f: fn(&LossBreakdown) -> &Vec<f64>| -> Vec<f64> {
            let len = f(&items[0]).len();
            (0..len)
                .map(|i| items.iter().map(|b| f(b)[i]).sum::<f64>() / n)
                .collect()
        };
        LossBreakdown {
            ce: avg(|b| b.ce),
            hsr: avg(|b| b.hsr),
            mhar: avg(|b| b.mhar),
            or_: avg(|b| b.or_),
            total: avg(|b| b.total),
            per_layer_hsr: avg_vec(|b| &b.per_layer_hsr),
            per_layer_mhar: avg_vec(|b| &b.per_layer_mhar),
        }
    }
}

/// All unordered index pairs `(i, j)` with `i < j < k`.
pub fn pass_pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k)
        .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
        .collect()
}

/// Sum of per-pass cross-entropies; `k >= 1`.
pub fn pass_cross_entropy(
    tape: &mut GradientTape,
    traces: &[ForwardTrace],
    label: usize,
) -> Result<Var> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("no forward traces".into()));
    }
    let terms = traces
        .iter()
        .map(|t| tape.cross_entropy(t.logits, label))
        .collect::<Result<Vec<_>>>()?;
    tape.add_n(&terms)
}

/// Sum of the `k >= 2` per-pass cross-entropies.
pub fn dual_cross_entropy(
    tape: &mut GradientTape,
    traces: &[ForwardTrace],
    label: usize,
) -> Result<Var> {
    require_pairs(traces)?;
    pass_cross_entropy(tape, traces, label)
}

fn require_pairs(traces: &[ForwardTrace]) -> Result<()> {
    if traces.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least two forward passes, got {}",
            traces.len()
        )));
    }
    Ok(())
}

fn check_structure(tape: &GradientTape, traces: &[ForwardTrace]) -> Result<()> {
    let first = &traces[0];
    for t in &traces[1..] {
        let same_layers = t.num_layers() == first.num_layers();
        let same_heads = t
            .attentions
            .iter()
            .zip(&first.attentions)
            .all(|(a, b)| a.len() == b.len());
        if !same_layers || !same_heads || t.valid_len != first.valid_len {
            return Err(Error::InvalidArgument(
                "forward traces differ in layer count, head count or length".into(),
            ));
        }
        for (a, b) in t.hidden_states.iter().zip(&first.hidden_states) {
            if tape.value(*a).shape() != tape.value(*b).shape() {
                return Err(Error::ShapeMismatch {
                    op: "hidden_state_reg",
                    left: tape.value(*a).shape().to_vec(),
                    right: tape.value(*b).shape().to_vec(),
                });
            }
        }
    }
    Ok(())
}

/// Rows (and, for square attention maps, columns) beyond `valid_len`.
fn trim_rows(tape: &mut GradientTape, x: Var, valid_len: usize) -> Result<Var> {
    let (rows, cols) = tape.value(x).dims2()?;
    if valid_len >= rows {
        return Ok(x);
    }
    tape.block(x, 0, valid_len, 0, cols)
}

fn trim_square(tape: &mut GradientTape, x: Var, valid_len: usize) -> Result<Var> {
    let (rows, _) = tape.value(x).dims2()?;
    if valid_len >= rows {
        return Ok(x);
    }
    tape.block(x, 0, valid_len, 0, valid_len)
}

/// Hidden-state MSE averaged over the selected layers and all pass pairs.
/// Returns the term and its per-layer values (each averaged over pairs).
pub fn hidden_state_reg(
    tape: &mut GradientTape,
    traces: &[ForwardTrace],
    layers: HsrLayers,
) -> Result<(Var, Vec<f64>)> {
    require_pairs(traces)?;
    check_structure(tape, traces)?;
    let n_layers = traces[0].num_layers();
    if n_layers == 0 {
        return Err(Error::InvalidArgument("traces have no layers".into()));
    }
    let selected: Vec<usize> = match layers {
        HsrLayers::All => (0..n_layers).collect(),
        HsrLayers::Last => vec![n_layers - 1],
    };
    let valid = traces[0].valid_len;
    let mut pair_terms = Vec::new();
    let mut per_layer = vec![0.0; selected.len()];
    let pairs = pass_pairs(traces.len());
    for &(i, j) in &pairs {
        let mut layer_terms = Vec::with_capacity(selected.len());
        for (slot, &layer) in selected.iter().enumerate() {
            let a = trim_rows(tape, traces[i].hidden_states[layer], valid)?;
            let b = trim_rows(tape, traces[j].hidden_states[layer], valid)?;
            let m = tape.mse_mean(a, b)?;
            per_layer[slot] += tape.scalar(m)? / pairs.len() as f64;
            layer_terms.push(m);
        }
        pair_terms.push(tape.mean_n(&layer_terms)?);
    }
    Ok((tape.mean_n(&pair_terms)?, per_layer))
}

/// Per layer `(1/h) * sum_i MSE(A_i^1, A_i^2)`, averaged over layers and all
/// pass pairs.
pub fn attention_reg(tape: &mut GradientTape, traces: &[ForwardTrace]) -> Result<(Var, Vec<f64>)> {
    require_pairs(traces)?;
    check_structure(tape, traces)?;
    let n_layers = traces[0].num_layers();
    if n_layers == 0 || traces[0].num_heads() == 0 {
        return Err(Error::InvalidArgument(
            "traces have no attention heads".into(),
        ));
    }
    let valid = traces[0].valid_len;
    let pairs = pass_pairs(traces.len());
    let mut pair_terms = Vec::new();
    let mut per_layer = vec![0.0; n_layers];
    for &(i, j) in &pairs {
        let mut layer_terms = Vec::with_capacity(n_layers);
        for (layer, slot) in per_layer.iter_mut().enumerate() {
            let heads = traces[i].attentions[layer].len();
            let mut head_terms = Vec::with_capacity(heads);
            for h in 0..heads {
                let a = trim_square(tape, traces[i].attentions[layer][h], valid)?;
                let b = trim_square(tape, traces[j].attentions[layer][h], valid)?;
                head_terms.push(tape.mse_mean(a, b)?);
            }
            let layer_term = tape.mean_n(&head_terms)?;
            *slot += tape.scalar(layer_term)? / pairs.len() as f64;
            layer_terms.push(layer_term);
        }
        pair_terms.push(tape.mean_n(&layer_terms)?);
    }
    Ok((tape.mean_n(&pair_terms)?, per_layer))
}

/// Symmetrized KL between the passes' softmax outputs, averaged over pairs.
pub fn output_reg(tape: &mut GradientTape, traces: &[ForwardTrace]) -> Result<Var> {
    require_pairs(traces)?;
    let classes = tape.value(traces[0].logits).len();
    let mut probs = Vec::with_capacity(traces.len());
    for t in traces {
        let c = tape.value(t.logits).len();
        if c != classes {
            return Err(Error::ShapeMismatch {
                op: "output_reg",
                left: vec![classes],
                right: vec![c],
            });
        }
        let row = tape.reshape(t.logits, vec![1, c])?;
        probs.push(tape.row_softmax(row)?);
    }
    let terms = pass_pairs(traces.len())
        .into_iter()
        .map(|(i, j)| tape.kl_bidirectional(probs[i], probs[j]))
        .collect::<Result<Vec<_>>>()?;
    tape.mean_n(&terms)
}

/// One example: `k` traces of the same input and its label.
#[derive(Debug, Clone)]
pub struct ExampleTraces {
    pub traces: Vec<ForwardTrace>,
    pub label: usize,
}

/// Objective for a single example. See [`batch_objective`].
pub fn total_objective(
    tape: &mut GradientTape,
    traces: &[ForwardTrace],
    label: usize,
    weights: &LossWeights,
    switches: &TermSwitches,
) -> Result<(Var, LossBreakdown)> {
    let example = ExampleTraces {
        traces: traces.to_vec(),
        label,
    };
    batch_objective(tape, std::slice::from_ref(&example), weights, switches, 1.0)
}

/// Objective averaged over a batch. Every term is first averaged over the
/// examples, then combined as `ce + alpha*hsr + beta*mhar + gamma*or`.
/// `ce_scale` multiplies the cross-entropy term (1 for normal training).
pub fn batch_objective(
    tape: &mut GradientTape,
    batch: &[ExampleTraces],
    weights: &LossWeights,
    switches: &TermSwitches,
    ce_scale: f64,
) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let k = batch[0].traces.len();
    if k == 0 || batch.iter().any(|e| e.traces.len() != k) {
        return Err(Error::InvalidArgument(
            "every example needs the same, non-zero number of passes".into(),
        ));
    }
    let paired = k >= 2;
    let hsr_active = paired && switches.hsr_on && weights.alpha > 0.0;
    let mhar_active = paired && switches.mhar_on && weights.beta > 0.0;
    let or_active = paired && switches.or_on && weights.gamma > 0.0;

    let mut ce = Vec::with_capacity(batch.len());
    let mut hsr = Vec::new();
    let mut mhar = Vec::new();
    let mut or_ = Vec::new();
    let mut hsr_layers = Vec::new();
    let mut mhar_layers = Vec::new();
    for ex in batch {
        ce.push(pass_cross_entropy(tape, &ex.traces, ex.label)?);
        if hsr_active {
            let (v, layers) = hidden_state_reg(tape, &ex.traces, switches.hsr_layers)?;
            hsr.push(v);
            hsr_layers.push(layers);
        }
        if mhar_active {
            let (v, layers) = attention_reg(tape, &ex.traces)?;
            mhar.push(v);
            mhar_layers.push(layers);
        }
        if or_active {
            or_.push(output_reg(tape, &ex.traces)?);
        }
    }

    let mut breakdown = LossBreakdown::default();
    let mut ce_term = tape.mean_n(&ce)?;
    if ce_scale != 1.0 {
        ce_term = tape.scale(ce_term, ce_scale)?;
    }
    breakdown.ce = tape.scalar(ce_term)?;
    let mut total = ce_term;

    let weighted = [
        (hsr, weights.alpha, 0usize),
        (mhar, weights.beta, 1),
        (or_, weights.gamma, 2),
    ];
    for (terms, w, which) in weighted {
        if terms.is_empty() {
            continue;
        }
        let mean = tape.mean_n(&terms)?;
        let value = tape.scalar(mean)?;
        match which {
            0 => breakdown.hsr = value,
            1 => breakdown.mhar = value,
            _ => breakdown.or_ = value,
        }
        let scaled = tape.scale(mean, w)?;
        total = tape.add(total, scaled)?;
    }
    breakdown.total = tape.scalar(total)?;
    breakdown.per_layer_hsr = mean_columns(&hsr_layers);
    breakdown.per_layer_mhar = mean_columns(&mhar_layers);
    Ok((total, breakdown))
}

fn mean_columns(rows: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let n = rows.len() as f64;
    (0..first.len())
        .map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n)
        .collect()
}
