//! Reverse-mode differentiation over whole-tensor operations.
//!
//! A [`GradientTape`] records every operation in application order. Values are
//! computed eagerly when an operation is recorded, so a tape doubles as the
//! forward evaluator. Named parameter blocks are registered once per tape;
//! registering the same name again returns the existing handle, which is how
//! gradients from several forward passes accumulate into one block.

use std::collections::BTreeMap;

use super::kernels::{self, PROB_FLOOR};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`GradientTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRowBias(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    Masked {
        x: Var,
        mask: Tensor,
        keep: f64,
    },
    Relu(Var),
    RowSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Block {
        x: Var,
        r0: usize,
        c0: usize,
    },
    ConcatCols(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<Option<usize>>,
    },
    MeanRows {
        x: Var,
        rows: usize,
    },
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
    Mse(Var, Var),
    KlBidirectional(Var, Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct GradientTape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    consumed: bool,
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    /// Registers (or looks up) a named, differentiable parameter block.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push_raw(value.clone(), Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], name: &'static str) -> Result<Var> {
        let value = value.ensure_finite(name)?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_raw(value, op, needs_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b), &[a, b], "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        self.push(out, Op::Transpose(a), &[a], "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(out, Op::Add(a, b), &[a, b], "add")
    }

    /// Sums a non-empty list left to right.
    pub fn add_n(&mut self, items: &[Var]) -> Result<Var> {
        let (&first, rest) = items
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("add_n of an empty list".into()))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// Arithmetic mean of a non-empty list of same-shaped values.
    pub fn mean_n(&mut self, items: &[Var]) -> Result<Var> {
        let s = self.add_n(items)?;
        if items.len() == 1 {
            return Ok(s);
        }
        self.scale(s, 1.0 / items.len() as f64)
    }

    /// `x + b` with `b` of length `cols` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        let bias = self.value(b);
        if bias.len() != cols {
            return Err(Error::ShapeMismatch {
                op: "add_row_bias",
                left: self.value(x).shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        let mut out = self.value(x).clone();
        let bd = bias.data().to_vec();
        for r in 0..rows {
            for (o, bv) in out.data_mut()[r * cols..(r + 1) * cols].iter_mut().zip(&bd) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRowBias(x, b), &[x, b], "add_row_bias")
    }

    /// Adds a constant tensor (no gradient flows into the constant).
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        let out = self.value(x).zip_map(c, |a, b| a + b)?;
        self.push(out, Op::AddConst(x), &[x], "add_const")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).scale(c);
        self.push(out, Op::Scale(x, c), &[x], "scale")
    }

    /// Inverted dropout with a given keep-mask.
    pub fn dropout_with_mask(&mut self, x: Var, mask: Tensor, rate: f64) -> Result<Var> {
        let out = kernels::apply_mask(self.value(x), &mask, rate)?;
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        self.push(out, Op::Masked { x, mask, keep }, &[x], "dropout")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x), &[x], "relu")
    }

    pub fn row_softmax(&mut self, x: Var) -> Result<Var> {
        let out = kernels::row_softmax(self.value(x))?;
        self.push(out, Op::RowSoftmax(x), &[x], "row_softmax")
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        if self.value(gain).len() != cols || self.value(bias).len() != cols {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                left: self.value(x).shape().to_vec(),
                right: self.value(gain).shape().to_vec(),
            });
        }
        let xv = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; rows * cols];
        let mut out = vec![0.0; rows * cols];
        let mut inv_std = Vec::with_capacity(rows);
        let n = cols as f64;
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for c in 0..cols {
                let h = (row[c] - mean) * inv;
                xhat[r * cols + c] = h;
                out[r * cols + c] = g[c] * h + b[c];
            }
        }
        let out = Tensor::new(vec![rows, cols], out)?;
        let xhat = Tensor::new(vec![rows, cols], xhat)?;
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
            "layer_norm",
        )
    }

    /// Sub-matrix `[r0..r0+rows, c0..c0+cols]`.
    pub fn block(&mut self, x: Var, r0: usize, rows: usize, c0: usize, cols: usize) -> Result<Var> {
        let out = self.value(x).block(r0, rows, c0, cols)?;
        self.push(out, Op::Block { x, r0, c0 }, &[x], "block")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let (rows, _) = self.value(*first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: self.value(*first).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], out)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), parts, "concat_cols")
    }

    /// Stacks rows of a 2-D `table`; `None` yields an all-zero row.
    pub fn gather_rows(&mut self, table: Var, ids: &[Option<usize>]) -> Result<Var> {
        let (n, cols) = self.value(table).dims2()?;
        let mut out = Vec::with_capacity(ids.len() * cols);
        for id in ids {
            match *id {
                Some(i) if i >= n => {
                    return Err(Error::OutOfRange {
                        what: "embedding table",
                        index: i,
                        bound: n,
                    })
                }
                Some(i) => out.extend_from_slice(self.value(table).row(i)),
                None => out.extend(std::iter::repeat_n(0.0, cols)),
            }
        }
        let out = Tensor::new(vec![ids.len(), cols], out)?;
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
            "gather_rows",
        )
    }

    /// Mean of the first `rows` rows, as a `[1 x cols]` matrix.
    pub fn mean_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if rows == 0 || rows > r {
            return Err(Error::InvalidArgument(format!(
                "mean over {rows} rows of a {r}-row matrix"
            )));
        }
        let xv = self.value(x);
        let mut out = vec![0.0; c];
        for i in 0..rows {
            for (o, v) in out.iter_mut().zip(xv.row(i)) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= rows as f64;
        }
        let out = Tensor::new(vec![1, c], out)?;
        self.push(out, Op::MeanRows { x, rows }, &[x], "mean_rows")
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        self.push(out, Op::Reshape(x), &[x], "reshape")
    }

    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let lv = self.value(logits);
        let loss = kernels::cross_entropy(lv, label)?;
        let mut probs = vec![0.0; lv.len()];
        kernels::softmax_into(lv.data(), &mut probs);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            &[logits],
            "cross_entropy",
        )
    }

    pub fn mse_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        let loss = kernels::mse_mean(self.value(a), self.value(b))?;
        self.push(Tensor::scalar(loss), Op::Mse(a, b), &[a, b], "mse_mean")
    }

    /// Symmetrized KL between two probability tensors of equal length.
    pub fn kl_bidirectional(&mut self, p: Var, q: Var) -> Result<Var> {
        let pv = self.value(p).reshape(vec![self.value(p).len()])?;
        let qv = self.value(q).reshape(vec![self.value(q).len()])?;
        let loss = kernels::kl_bidirectional(&pv, &qv)?;
        self.push(
            Tensor::scalar(loss),
            Op::KlBidirectional(p, q),
            &[p, q],
            "kl_bidirectional",
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x], "sum")
    }

    /// Propagates `d loss / d node` back through the tape and returns the
    /// gradient of every registered parameter block. Blocks the loss does not
    /// reach get a zero gradient of the block's shape.
    pub fn backward(&mut self, loss: Var) -> Result<BTreeMap<String, Tensor>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::InvalidShape {
                shape: self.value(loss).shape().to_vec(),
                reason: "backward needs a scalar loss".into(),
            });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
        }

        let mut out = BTreeMap::new();
        for (name, &v) in &self.params {
            let g = grads
                .get_mut(v.0)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
            out.insert(name.clone(), g.ensure_finite("backward")?);
        }
        Ok(out)
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let acc = |v: Var, d: Tensor, grads: &mut [Option<Tensor>]| -> Result<()> {
            if !self.nodes[v.0].needs_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => {
                    *slot = Some(d);
                    Ok(())
                }
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    acc(*a, kernels::matmul(g, &bv.transpose()?)?, grads)?;
                }
                if self.nodes[b.0].needs_grad {
                    acc(*b, kernels::matmul(&av.transpose()?, g)?, grads)?;
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()?, grads)?,
            Op::Add(a, b) => {
                acc(*a, g.clone(), grads)?;
                acc(*b, g.clone(), grads)?;
            }
            Op::AddRowBias(x, b) => {
                acc(*x, g.clone(), grads)?;
                let (rows, cols) = g.dims2()?;
                let mut db = vec![0.0; cols];
                for r in 0..rows {
                    for (d, v) in db.iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                let shape = self.value(*b).shape().to_vec();
                acc(*b, Tensor::new(shape, db)?, grads)?;
            }
            Op::AddConst(x) => acc(*x, g.clone(), grads)?,
            Op::Scale(x, c) => acc(*x, g.scale(*c), grads)?,
            Op::Masked { x, mask, keep } => {
                let d = g.zip_map(mask, |gv, m| gv * m * keep)?;
                acc(*x, d, grads)?;
            }
            Op::Relu(x) => {
                let d = g.zip_map(&node.value, |gv, y| if y > 0.0 { gv } else { 0.0 })?;
                acc(*x, d, grads)?;
            }
            Op::RowSoftmax(x) => {
                let y = &node.value;
                let (rows, cols) = y.dims2()?;
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        d[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                acc(*x, Tensor::new(vec![rows, cols], d)?, grads)?;
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = xhat.dims2()?;
                let gv = self.value(*gain).data();
                let n = cols as f64;
                let mut dgain = vec![0.0; cols];
                let mut dbias = vec![0.0; cols];
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let (hr, gr) = (xhat.row(r), g.row(r));
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for c in 0..cols {
                        dgain[c] += gr[c] * hr[c];
                        dbias[c] += gr[c];
                        let dh = gr[c] * gv[c];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[c];
                    }
                    for c in 0..cols {
                        let dh = gr[c] * gv[c];
                        dx[r * cols + c] = inv_std[r] / n * (n * dh - sum_dh - hr[c] * sum_dh_h);
                    }
                }
                acc(*x, Tensor::new(vec![rows, cols], dx)?, grads)?;
                let gshape = self.value(*gain).shape().to_vec();
                let bshape = self.value(*bias).shape().to_vec();
                acc(*gain, Tensor::new(gshape, dgain)?, grads)?;
                acc(*bias, Tensor::new(bshape, dbias)?, grads)?;
            }
            Op::Block { x, r0, c0 } => {
                let src = self.value(*x);
                let (_, cols) = src.dims2()?;
                let (nr, nc) = g.dims2()?;
                let mut d = Tensor::zeros(src.shape());
                for r in 0..nr {
                    let dst = (r0 + r) * cols + c0;
                    d.data_mut()[dst..dst + nc].copy_from_slice(g.row(r));
                }
                acc(*x, d, grads)?;
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = g.dims2()?;
                let mut c0 = 0;
                for &p in parts {
                    let (_, w) = self.value(p).dims2()?;
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&g.data()[r * total + c0..r * total + c0 + w]);
                    }
                    acc(p, Tensor::new(vec![rows, w], d)?, grads)?;
                    c0 += w;
                }
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let (_, cols) = tv.dims2()?;
                let mut d = Tensor::zeros(tv.shape());
                for (r, id) in ids.iter().enumerate() {
                    if let Some(t) = *id {
                        for (dv, gv) in d.data_mut()[t * cols..(t + 1) * cols]
                            .iter_mut()
                            .zip(g.row(r))
                        {
                            *dv += gv;
                        }
                    }
                }
                acc(*table, d, grads)?;
            }
            Op::MeanRows { x, rows } => {
                let src = self.value(*x);
                let (_, cols) = src.dims2()?;
                let mut d = Tensor::zeros(src.shape());
                let inv = 1.0 / *rows as f64;
                for r in 0..*rows {
                    for c in 0..cols {
                        d.data_mut()[r * cols + c] = g.data()[c] * inv;
                    }
                }
                acc(*x, d, grads)?;
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                acc(*x, g.reshape(shape)?, grads)?;
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => {
                let gs = g.item()?;
                let mut d = probs.clone();
                d[*label] -= 1.0;
                for v in d.iter_mut() {
                    *v *= gs;
                }
                let shape = self.value(*logits).shape().to_vec();
                acc(*logits, Tensor::new(shape, d)?, grads)?;
            }
            Op::Mse(a, b) => {
                let gs = g.item()?;
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = 2.0 * gs / av.len() as f64;
                let da = av.zip_map(bv, |x, y| k * (x - y))?;
                let db = da.scale(-1.0);
                acc(*a, da, grads)?;
                acc(*b, db, grads)?;
            }
            Op::KlBidirectional(p, q) => {
                let gs = g.item()?;
                let (pv, qv) = (self.value(*p), self.value(*q));
                let dp = kl_bidirectional_grad(pv.data(), qv.data(), gs);
                let dq = kl_bidirectional_grad(qv.data(), pv.data(), gs);
                acc(*p, Tensor::new(pv.shape().to_vec(), dp)?, grads)?;
                acc(*q, Tensor::new(qv.shape().to_vec(), dq)?, grads)?;
            }
            Op::Sum(x) => {
                let gs = g.item()?;
                acc(*x, Tensor::full(self.value(*x).shape(), gs), grads)?;
            }
        }
        Ok(())
    }
}

/// Gradient of `0.5 * (KL(p||q) + KL(q||p))` with respect to `p`.
fn kl_bidirectional_grad(p: &[f64], q: &[f64], scale: f64) -> Vec<f64> {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let (cp, cq) = (pi.max(PROB_FLOOR), qi.max(PROB_FLOOR));
            let active = if pi > PROB_FLOOR { 1.0 } else { 0.0 };
            let d = cp.ln() - cq.ln() + active * (pi - qi) / cp;
            0.5 * scale * d
        })
        .collect()
}
