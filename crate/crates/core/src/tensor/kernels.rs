//! Value-level numeric kernels. The gradient tape calls these for its
//! forward values; they are also usable directly on plain tensors.

use super::rng::RngStream;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking a log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on `sum(p) == 1` for probability-vector inputs.
const PROB_SUM_TOL: f64 = 1e-9;

/// Row-wise softmax of a 2-D tensor with max-subtraction.
pub fn row_softmax(scores: &Tensor) -> Result<Tensor> {
    let (rows, cols) = scores.dims2()?;
    if !scores.is_finite() {
        return Err(Error::InvalidArgument(
            "row_softmax input is not finite".into(),
        ));
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        softmax_into(scores.row(r), &mut out[r * cols..(r + 1) * cols]);
    }
    Tensor::new(vec![rows, cols], out)
}

/// Softmax of a single slice into `out`.
pub(crate) fn softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// `log(sum(exp(x)))` computed around the maximum.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Samples a Bernoulli(1 - rate) keep-mask for `shape`.
pub fn dropout_mask(shape: &[usize], rate: f64, rng: &mut RngStream) -> Result<Tensor> {
    check_rate(rate)?;
    let mut mask = Tensor::ones(shape);
    if rate > 0.0 {
        for m in mask.data_mut() {
            if rng.uniform() < rate {
                *m = 0.0;
            }
        }
    }
    Ok(mask)
}

/// Inverted dropout: `x * mask / (1 - rate)`. Returns the output and the mask.
pub fn dropout(x: &Tensor, rate: f64, rng: &mut RngStream) -> Result<(Tensor, Tensor)> {
    let mask = dropout_mask(x.shape(), rate, rng)?;
    let out = apply_mask(x, &mask, rate)?;
    Ok((out, mask))
}

/// Applies a precomputed keep-mask with inverted scaling.
pub fn apply_mask(x: &Tensor, mask: &Tensor, rate: f64) -> Result<Tensor> {
    check_rate(rate)?;
    if rate == 0.0 {
        x.check_same_shape(mask, "dropout")?;
        return Ok(x.clone());
    }
    let keep = 1.0 / (1.0 - rate);
    x.zip_map(mask, |v, m| v * m * keep)
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Mean of squared differences over all elements.
pub fn mse_mean(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape(b, "mse_mean")?;
    let n = a.len() as f64;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(s / n)
}

/// `KL(p || q)` with both arguments clamped at [`PROB_FLOOR`] inside the log.
pub(crate) fn kl_clamped(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| pi * (pi.max(PROB_FLOOR).ln() - qi.max(PROB_FLOOR).ln()))
        .sum()
}

/// Symmetrized divergence `0.5 * (KL(p||q) + KL(q||p))` between two
/// probability vectors.
pub fn kl_bidirectional(p: &Tensor, q: &Tensor) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch {
            op: "kl_bidirectional",
            left: p.shape().to_vec(),
            right: q.shape().to_vec(),
        });
    }
    check_probability(p)?;
    check_probability(q)?;
    Ok(0.5 * (kl_clamped(p.data(), q.data()) + kl_clamped(q.data(), p.data())))
}

fn check_probability(p: &Tensor) -> Result<()> {
    if p.data().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "probability vector has negative or non-finite entries".into(),
        ));
    }
    let s = p.sum();
    if (s - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::InvalidArgument(format!(
            "probability vector sums to {s}"
        )));
    }
    Ok(())
}

/// `-log softmax(logits)[label]` via log-sum-exp.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<f64> {
    let c = logits.len();
    if label >= c {
        return Err(Error::OutOfRange {
            what: "class label",
            index: label,
            bound: c,
        });
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("cross_entropy"));
    }
    let z = logits.data();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|v| (v - max).exp()).sum();
    Ok((max - z[label]) + s.ln())
}

/// `[m x k] * [k x n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}
