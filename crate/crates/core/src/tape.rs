//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Ops append nodes to the [`Tape`]; every node's inputs have smaller
//! indices, so the append order is a topological order and `backward` is a
//! single reverse sweep visiting each node exactly once. Gradients
//! accumulate additively across fan-out, always in ascending index order,
//! which keeps results bitwise reproducible.
//!
//! A tape is single-threaded; run concurrent work on separate tapes.

use crate::dtype::Element;
use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// Additive mask value standing in for minus infinity. Finite so that
/// `sentinel + score` stays exactly at the sentinel for any score of sane
/// magnitude and never produces NaN through inf - inf.
pub const MASK_SENTINEL: f64 = -1e30;

/// Rows whose masked maximum is at or below this are fully masked.
const FULL_MASK_FLOOR: f64 = -1e29;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Silu,
}

#[derive(Debug)]
enum Op<T: Element> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    MulScalar {
        x: Var,
        c: T,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    /// Saved probabilities are the node value itself.
    SoftmaxLast {
        x: Var,
    },
    Transpose {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
    },
    ConcatLast {
        parts: Vec<Var>,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    MeanRows {
        x: Var,
    },
    GatherRows {
        table: Var,
        indices: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        x_hat: Vec<T>,
        inv_std: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T: Element> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T: Element> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, or zeros of its shape if the loss never touched it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Tape<T> {
        Tape {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Clears the backward-done flag so the tape may run another sweep.
    pub fn zero_grads(&mut self) {
        self.backward_done = false;
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    /// Leaf that never receives gradient (inputs, masks, targets-as-data).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    // ── forward ops ─────────────────────────────────────────────────

    /// `a` may carry leading dimensions; its last dimension must equal
    /// `b`'s row count. `b` is strictly 2-D.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb.rank() != 2 || va.rank() < 1 || va.last_dim() != vb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (m, k, n) = (va.rows(), va.last_dim(), vb.shape()[1]);
        let data = kernels::matmul(va.data(), vb.data(), m, k, n);
        let mut shape = va.shape()[..va.rank() - 1].to_vec();
        shape.push(n);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::MatMul { a, b }, Tensor::new(shape, data)?, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    fn binary_elementwise(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data: Vec<T> = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(op, value, rg))
    }

    pub fn mul_scalar(&mut self, x: Var, c: T) -> Var {
        let vx = self.value(x);
        let data = kernels::map(vx.data(), |v| v * c);
        let value = Tensor::new(vx.shape().to_vec(), data).unwrap();
        let rg = self.requires(x);
        self.push(Op::MulScalar { x, c }, value, rg)
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Var {
        let vx = self.value(x);
        let data = match kind {
            Activation::Relu => kernels::map(vx.data(), |v| v.max(T::ZERO)),
            Activation::Sigmoid => kernels::map(vx.data(), sigmoid),
            Activation::Silu => kernels::map(vx.data(), |v| v * sigmoid(v)),
        };
        let value = Tensor::new(vx.shape().to_vec(), data).unwrap();
        let rg = self.requires(x);
        self.push(Op::Act { x, kind }, value, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(Activation::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(Activation::Sigmoid, x)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.activation(Activation::Silu, x)
    }

    /// Softmax over the last dimension. The mask, if any, must match `x`'s
    /// shape; it is added before the stabilizing max subtraction. A row
    /// with every entry masked is an error.
    pub fn softmax_last(&mut self, x: Var, mask: Option<&Tensor<T>>) -> Result<Var> {
        let vx = self.value(x);
        if let Some(m) = mask {
            if m.shape() != vx.shape() {
                return Err(Error::ShapeMismatch {
                    op: "softmax_last",
                    lhs: vx.shape().to_vec(),
                    rhs: m.shape().to_vec(),
                });
            }
        }
        let (rows, cols) = (vx.rows(), vx.last_dim());
        let data = kernels::softmax_rows(
            vx.data(),
            mask.map(|m| m.data()),
            rows,
            cols,
            FULL_MASK_FLOOR,
        )
        .map_err(|row| Error::FullyMaskedRow { row })?;
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.requires(x);
        Ok(self.push(Op::SoftmaxLast { x }, value, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                lhs: vx.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (r, c) = (vx.shape()[0], vx.shape()[1]);
        let value = Tensor::new(vec![c, r], kernels::transpose(vx.data(), r, c))?;
        let rg = self.requires(x);
        Ok(self.push(Op::Transpose { x }, value, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let vx = self.value(x);
        let numel: usize = shape.iter().product();
        if numel != vx.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: vx.shape().to_vec(),
                rhs: shape,
            });
        }
        let value = Tensor::new(shape, vx.data().to_vec())?;
        let rg = self.requires(x);
        Ok(self.push(Op::Reshape { x }, value, rg))
    }

    /// Columns `[start, start+len)` of the last dimension.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        let cols = vx.last_dim();
        if vx.rank() < 1 || start + len > cols || len == 0 {
            return Err(Error::invalid(format!(
                "slice_cols [{start}, {}) out of bounds for last dimension {cols}",
                start + len
            )));
        }
        let rows = vx.rows();
        let mut data = Vec::with_capacity(rows * len);
        for i in 0..rows {
            data.extend_from_slice(&vx.data()[i * cols + start..i * cols + start + len]);
        }
        let mut shape = vx.shape()[..vx.rank() - 1].to_vec();
        shape.push(len);
        let value = Tensor::new(shape, data)?;
        let rg = self.requires(x);
        Ok(self.push(Op::SliceCols { x, start, len }, value, rg))
    }

    /// First and second half of the last dimension, which must be even.
    /// Concatenating the halves restores the input exactly.
    pub fn split_half_last(&mut self, x: Var) -> Result<(Var, Var)> {
        let cols = self.value(x).last_dim();
        if !cols.is_multiple_of(2) || cols == 0 {
            return Err(Error::OddLastDim {
                op: "split_half_last",
                dim: cols,
            });
        }
        let half = cols / 2;
        let lo = self.slice_cols(x, 0, half)?;
        let hi = self.slice_cols(x, half, half)?;
        Ok((lo, hi))
    }

    /// Concatenate along the last dimension; leading dimensions must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_last of zero tensors"));
        }
        let lead = self.value(parts[0]).shape()[..self.value(parts[0]).rank() - 1].to_vec();
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for p in parts {
            let vp = self.value(*p);
            if vp.shape()[..vp.rank() - 1] != lead[..] {
                return Err(Error::ShapeMismatch {
                    op: "concat_last",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: vp.shape().to_vec(),
                });
            }
            total += vp.last_dim();
        }
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for p in parts {
                let vp = self.value(*p);
                let c = vp.last_dim();
                data.extend_from_slice(&vp.data()[i * c..(i + 1) * c]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        let rg = parts.iter().any(|p| self.requires(*p));
        Ok(self.push(
            Op::ConcatLast {
                parts: parts.to_vec(),
            },
            value,
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let mut s = T::ZERO;
        for v in vx.data() {
            s += *v;
        }
        let rg = self.requires(x);
        self.push(Op::Sum { x }, Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let n = T::from_f64(vx.numel() as f64);
        let mut s = T::ZERO;
        for v in vx.data() {
            s += *v;
        }
        let rg = self.requires(x);
        self.push(Op::Mean { x }, Tensor::scalar(s / n), rg)
    }

    /// Mean over rows: [n x d] -> [1 x d].
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "mean_rows",
                lhs: vx.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (n, d) = (vx.shape()[0], vx.shape()[1]);
        let inv = T::from_f64(1.0 / n as f64);
        let mut out = vec![T::ZERO; d];
        for row in vx.data().chunks_exact(d) {
            for (slot, v) in out.iter_mut().zip(row) {
                *slot += *v;
            }
        }
        for v in out.iter_mut() {
            *v = *v * inv;
        }
        let rg = self.requires(x);
        Ok(self.push(Op::MeanRows { x }, Tensor::new(vec![1, d], out)?, rg))
    }

    /// Rows of a [v x d] table selected by index, in order.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        if vt.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                lhs: vt.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (v, d) = (vt.shape()[0], vt.shape()[1]);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &ix in indices {
            if ix >= v {
                return Err(Error::IndexOutOfRange {
                    what: "gather_rows table",
                    index: ix,
                    size: v,
                });
            }
            data.extend_from_slice(&vt.data()[ix * d..(ix + 1) * d]);
        }
        let value = Tensor::new(vec![indices.len(), d], data)?;
        let rg = self.requires(table);
        Ok(self.push(
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
            value,
            rg,
        ))
    }

    /// Per-slice normalization over the last dimension with affine gain and
    /// shift; epsilon sits inside the square root. Variance is biased
    /// (divided by d).
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).last_dim();
        for (v, name) in [(gain, "gain"), (shift, "shift")] {
            let s = self.value(v).shape();
            if s != [d] {
                return Err(Error::invalid(format!(
                    "layer_norm {name} shape {s:?} does not match normalized dimension {d}"
                )));
            }
        }
        let vx = self.value(x);
        let rows = vx.rows();
        let inv_d = T::from_f64(1.0 / d as f64);
        let eps_t = T::from_f64(eps);
        let mut x_hat = vec![T::ZERO; rows * d];
        let mut inv_std = vec![T::ZERO; rows];
        let mut out = vec![T::ZERO; rows * d];
        let gdata = self.value(gain).data().to_vec();
        let sdata = self.value(shift).data().to_vec();
        for i in 0..rows {
            let row = &vx.data()[i * d..(i + 1) * d];
            let mut mean = T::ZERO;
            for v in row {
                mean += *v;
            }
            mean = mean * inv_d;
            let mut var = T::ZERO;
            for v in row {
                let c = *v - mean;
                var += c * c;
            }
            var = var * inv_d;
            let inv = T::ONE / (var + eps_t).sqrt();
            inv_std[i] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                x_hat[i * d + j] = h;
                out[i * d + j] = gdata[j] * h + sdata[j];
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.requires(x) || self.requires(gain) || self.requires(shift);
        Ok(self.push(
            Op::LayerNorm {
                x,
                gain,
                shift,
                x_hat,
                inv_std,
            },
            value,
            rg,
        ))
    }

    /// Mean over rows of `-log softmax(logits)[target]`, computed through
    /// the stable log-sum-exp form.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        if vl.rank() != 2 || vl.shape()[0] != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: vl.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let (n, c) = (vl.shape()[0], vl.shape()[1]);
        for (i, t) in targets.iter().enumerate() {
            if *t >= c {
                return Err(Error::IndexOutOfRange {
                    what: "cross_entropy target",
                    index: *t,
                    size: c,
                });
            }
            let _ = i;
        }
        let mut probs = vec![T::ZERO; n * c];
        let mut total = T::ZERO;
        for i in 0..n {
            let row = &vl.data()[i * c..(i + 1) * c];
            let mut m = row[0];
            for v in row {
                m = m.max(*v);
            }
            let mut s = T::ZERO;
            for (j, v) in row.iter().enumerate() {
                let e = (*v - m).exp();
                probs[i * c + j] = e;
                s += e;
            }
            for j in 0..c {
                probs[i * c + j] = probs[i * c + j] / s;
            }
            // loss_i = logsumexp(row) - row[target]
            total += m + s.ln() - row[targets[i]];
        }
        let loss = total / T::from_f64(n as f64);
        let rg = self.requires(logits);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns the gradient of every
    /// reachable node; leaves created with `requires_grad == false` are
    /// pruned. Erroring on a second call without [`Tape::zero_grads`]
    /// catches harness bugs that would silently mix two sweeps.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let vl = self.value(loss);
        if vl.numel() != 1 {
            return Err(Error::NonScalarLoss { numel: vl.numel() });
        }
        self.backward_done = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[loss.0] = Some(vec![T::ONE]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.map(|data| Tensor::new(self.nodes[id].value.shape().to_vec(), data).unwrap())
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Vec<T>>], v: Var, contribution: &[T]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = &mut grads[v.0];
        match slot {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e += *c;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (m, k, n) = (va.rows(), va.last_dim(), vb.shape()[1]);
                // dA = dC * B^T, dB = A^T * dC
                let bt = kernels::transpose(vb.data(), k, n);
                let da = kernels::matmul(g, &bt, m, n, k);
                self.accum(grads, *a, &da);
                let at = kernels::transpose(va.data(), m, k);
                let db = kernels::matmul(&at, g, k, m, n);
                self.accum(grads, *b, &db);
            }
            Op::Add { a, b } => {
                self.accum(grads, *a, g);
                self.accum(grads, *b, g);
            }
            Op::Mul { a, b } => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let da: Vec<T> = g.iter().zip(vb.data()).map(|(gi, bi)| *gi * *bi).collect();
                self.accum(grads, *a, &da);
                let db: Vec<T> = g.iter().zip(va.data()).map(|(gi, ai)| *gi * *ai).collect();
                self.accum(grads, *b, &db);
            }
            Op::MulScalar { x, c } => {
                let dx: Vec<T> = g.iter().map(|gi| *gi * *c).collect();
                self.accum(grads, *x, &dx);
            }
            Op::Act { x, kind } => {
                let vx = self.value(*x);
                let dx: Vec<T> = match kind {
                    Activation::Relu => g
                        .iter()
                        .zip(vx.data())
                        .map(|(gi, xi)| if *xi > T::ZERO { *gi } else { T::ZERO })
                        .collect(),
                    Activation::Sigmoid => {
                        // output saved as the node value: s' = s * (1 - s)
                        let vy = &self.nodes[id].value;
                        g.iter()
                            .zip(vy.data())
                            .map(|(gi, si)| *gi * *si * (T::ONE - *si))
                            .collect()
                    }
                    Activation::Silu => g
                        .iter()
                        .zip(vx.data())
                        .map(|(gi, xi)| {
                            let s = sigmoid(*xi);
                            *gi * s * (T::ONE + *xi * (T::ONE - s))
                        })
                        .collect(),
                };
                self.accum(grads, *x, &dx);
            }
            Op::SoftmaxLast { x } => {
                let p = &self.nodes[id].value;
                let cols = p.last_dim();
                let rows = p.rows();
                let mut dx = vec![T::ZERO; rows * cols];
                for i in 0..rows {
                    let pr = &p.data()[i * cols..(i + 1) * cols];
                    let gr = &g[i * cols..(i + 1) * cols];
                    let mut dot = T::ZERO;
                    for j in 0..cols {
                        dot += gr[j] * pr[j];
                    }
                    for j in 0..cols {
                        dx[i * cols + j] = pr[j] * (gr[j] - dot);
                    }
                }
                self.accum(grads, *x, &dx);
            }
            Op::Transpose { x } => {
                let vy = &self.nodes[id].value;
                let (r, c) = (vy.shape()[0], vy.shape()[1]);
                let dx = kernels::transpose(g, r, c);
                self.accum(grads, *x, &dx);
            }
            Op::Reshape { x } => {
                self.accum(grads, *x, g);
            }
            Op::SliceCols { x, start, len } => {
                let vx = self.value(*x);
                let cols = vx.last_dim();
                let rows = vx.rows();
                let mut dx = vec![T::ZERO; rows * cols];
                for i in 0..rows {
                    for j in 0..*len {
                        dx[i * cols + start + j] = g[i * len + j];
                    }
                }
                self.accum(grads, *x, &dx);
            }
            Op::ConcatLast { parts } => {
                let total: usize = parts.iter().map(|p| self.value(*p).last_dim()).sum();
                let rows = self.value(parts[0]).rows();
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).last_dim();
                    let mut dp = vec![T::ZERO; rows * c];
                    for i in 0..rows {
                        dp[i * c..(i + 1) * c]
                            .copy_from_slice(&g[i * total + offset..i * total + offset + c]);
                    }
                    self.accum(grads, *p, &dp);
                    offset += c;
                }
            }
            Op::Sum { x } => {
                let n = self.value(*x).numel();
                let dx = vec![g[0]; n];
                self.accum(grads, *x, &dx);
            }
            Op::Mean { x } => {
                let n = self.value(*x).numel();
                let gi = g[0] / T::from_f64(n as f64);
                let dx = vec![gi; n];
                self.accum(grads, *x, &dx);
            }
            Op::MeanRows { x } => {
                let vx = self.value(*x);
                let (n, d) = (vx.shape()[0], vx.shape()[1]);
                let inv = T::from_f64(1.0 / n as f64);
                let mut dx = vec![T::ZERO; n * d];
                for i in 0..n {
                    for j in 0..d {
                        dx[i * d + j] = g[j] * inv;
                    }
                }
                self.accum(grads, *x, &dx);
            }
            Op::GatherRows { table, indices } => {
                let vt = self.value(*table);
                let d = vt.shape()[1];
                let mut dt = vec![T::ZERO; vt.numel()];
                for (i, &ix) in indices.iter().enumerate() {
                    for j in 0..d {
                        dt[ix * d + j] += g[i * d + j];
                    }
                }
                self.accum(grads, *table, &dt);
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                x_hat,
                inv_std,
            } => {
                let d = self.value(*x).last_dim();
                let rows = self.value(*x).rows();
                let gdata = self.value(*gain).data();
                let inv_d = T::from_f64(1.0 / d as f64);

                let mut dgain = vec![T::ZERO; d];
                let mut dshift = vec![T::ZERO; d];
                let mut dx = vec![T::ZERO; rows * d];
                for i in 0..rows {
                    let gr = &g[i * d..(i + 1) * d];
                    let hr = &x_hat[i * d..(i + 1) * d];
                    for j in 0..d {
                        dgain[j] += gr[j] * hr[j];
                        dshift[j] += gr[j];
                    }
                    // dxhat = dy * gain; dx = inv_std * (dxhat - mean(dxhat)
                    //         - xhat * mean(dxhat * xhat))
                    let mut mean_dh = T::ZERO;
                    let mut mean_dh_h = T::ZERO;
                    for j in 0..d {
                        let dh = gr[j] * gdata[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                    }
                    mean_dh = mean_dh * inv_d;
                    mean_dh_h = mean_dh_h * inv_d;
                    for j in 0..d {
                        let dh = gr[j] * gdata[j];
                        dx[i * d + j] = inv_std[i] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                self.accum(grads, *x, &dx);
                self.accum(grads, *gain, &dgain);
                self.accum(grads, *shift, &dshift);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let vl = self.value(*logits);
                let (n, c) = (vl.shape()[0], vl.shape()[1]);
                let scale = g[0] / T::from_f64(n as f64);
                let mut dl = vec![T::ZERO; n * c];
                for i in 0..n {
                    for j in 0..c {
                        let indicator = if j == targets[i] { T::ONE } else { T::ZERO };
                        dl[i * c + j] = (probs[i * c + j] - indicator) * scale;
                    }
                }
                self.accum(grads, *logits, &dl);
            }
        }
    }
}

fn sigmoid<T: Element>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}
