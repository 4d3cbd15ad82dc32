//! Wengert tape: operations recorded forward, gradients replayed in reverse.
//!
//! Values are immutable once produced. A tape lives for one forward/backward
//! cycle and is dropped afterwards; parameters live outside the tape and are
//! re-registered as leaves each step. Node indices grow monotonically, so
//! reverse index order is a reverse topological order and accumulation is
//! additive for shared nodes.

use super::kernels;
use super::rng::Rng;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// Op already consumed by the backward sweep.
    Consumed,
    Matmul { a: Var, b: Var },
    Transpose { x: Var },
    Add { a: Var, b: Var },
    /// `[m,d] + [d]` trailing-axis broadcast.
    AddBias { x: Var, bias: Var },
    Sub { a: Var, b: Var },
    /// Elementwise product; one operand may be a `[1]` scalar.
    Mul { a: Var, b: Var },
    /// Elementwise quotient; the divisor may be a `[1]` scalar.
    Div { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    AddConst { x: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    Exp { x: Var },
    Ln { x: Var },
    Sqrt { x: Var },
    Abs { x: Var },
    Clamp { x: Var, lo: f64, hi: f64 },
    SoftmaxRows { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, x_hat: Vec<f64>, inv_std: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    Sum { x: Var },
    ColMean { x: Var },
    GatherRows { x: Var, indices: Vec<usize> },
    ScatterRowsFill { rows: Var, fill: Var, indices: Vec<usize> },
    ConcatCols { parts: Vec<Var> },
    SliceCols { x: Var, start: usize, len: usize },
    /// `out[i,j] = x[i,j] * s[i]`.
    ScaleRows { x: Var, s: Var },
    Recip { x: Var },
    Reshape { x: Var },
}

#[derive(Debug)]
struct Node {
    tensor: Tensor,
    op: Op,
}

/// Recording tape. Single-threaded; one tape per forward/backward cycle.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a tensor as a tape leaf, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf)
    }

    /// Register a non-differentiable constant.
    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.requires_grad = false;
        self.push(tensor, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].tensor.data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].tensor.shape
    }

    /// Gradient of a node, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].tensor.grad.as_deref()
    }

    fn push(&mut self, tensor: Tensor, op: Op) -> Var {
        self.nodes.push(Node { tensor, op });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        let tensor = Tensor {
            shape,
            data,
            requires_grad,
            grad: None,
        };
        self.push(tensor, op)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    // ── Operations ──────────────────────────────────────────────────────

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data = kernels::matmul(self.data(a), self.data(b), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push_op(vec![m, n], data, rg, Op::Matmul { a, b }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "transpose")?;
        let data = kernels::transpose(self.data(x), m, n);
        let rg = self.rg(x);
        Ok(self.push_op(vec![n, m], data, rg, Op::Transpose { x }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push_op(shape, data, rg, Op::Add { a, b }))
    }

    /// `[m,d] + [d]`: the bias row is added to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, d) = self.dims2(x, "add_bias")?;
        if self.value(bias).numel() != d {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let bv = self.data(bias).to_vec();
        let mut data = self.data(x).to_vec();
        for r in 0..m {
            for j in 0..d {
                data[r * d + j] += bv[j];
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push_op(vec![m, d], data, rg, Op::AddBias { x, bias }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x - y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push_op(shape, data, rg, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.value(a).numel(), self.value(b).numel());
        if na != nb && na != 1 && nb != 1 {
            return Err(Error::Shape {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let (xs, ys) = (self.data(a), self.data(b));
        let n = na.max(nb);
        let data: Vec<f64> = (0..n)
            .map(|i| xs[if na == 1 { 0 } else { i }] * ys[if nb == 1 { 0 } else { i }])
            .collect();
        let shape = if na >= nb {
            self.shape(a).to_vec()
        } else {
            self.shape(b).to_vec()
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push_op(shape, data, rg, Op::Mul { a, b }))
    }

    /// Elementwise `a / b`; `b` may be a `[1]` scalar.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.value(a).numel(), self.value(b).numel());
        if na != nb && nb != 1 {
            return Err(Error::Shape {
                op: "div",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let (xs, ys) = (self.data(a), self.data(b));
        let data: Vec<f64> = (0..na)
            .map(|i| xs[i] / ys[if nb == 1 { 0 } else { i }])
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push_op(shape, data, rg, Op::Div { a, b }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data: Vec<f64> = self.data(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push_op(shape, data, rg, Op::Scale { x, c })
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let data: Vec<f64> = self.data(x).iter().map(|&v| v + c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push_op(shape, data, rg, Op::AddConst { x })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push_op(shape, data, rg, Op::Relu { x })
    }

    /// Alias for [`relu`](Self::relu): `max(0, x)`.
    pub fn max0(&mut self, x: Var) -> Var {
        self.relu(x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self
            .data(x)
            .iter()
            .map(|&v| {
                // Split by sign so the exponential never overflows.
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push_op(shape, data, rg, Op::Sigmoid { x })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.data(x).iter().map(|&v| v.exp()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push_op(shape, data, rg, Op::Exp { x })
    }

    /// Natural logarithm; every element must be positive.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        if let Some(&bad) = self.data(x).iter().find(|v| **v <= 0.0) {
            return Err(Error::Domain(format!("ln of non-positive value {bad}")));
        }
        let data: Vec<f64> = self.data(x).iter().map(|&v| v.ln()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push_op(shape, data, rg, Op::Ln { x }))
    }

    /// Square root; subgradient 0 at exactly 0.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if let Some(&bad) = self.data(x).iter().find(|v| **v < 0.0) {
            return Err(Error::Domain(format!("sqrt of negative value {bad}")));
        }
        let data: Vec<f64> = self.data(x).iter().map(|&v| v.sqrt()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push_op(shape, data, rg, Op::Sqrt { x }))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.data(x).iter().map(|&v| v.abs()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push_op(shape, data, rg, Op::Abs { x })
    }

    /// Clamp into `[lo, hi]`; gradient passes only through the interior.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let data: Vec<f64> = self.data(x).iter().map(|&v| v.clamp(lo, hi)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push_op(shape, data, rg, Op::Clamp { x, lo, hi })
    }

    /// Row-wise softmax with per-row max subtraction. NaN inputs propagate.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "softmax_rows")?;
        let data = kernels::softmax_rows(self.data(x), m, n);
        let rg = self.rg(x);
        Ok(self.push_op(vec![m, n], data, rg, Op::SoftmaxRows { x }))
    }

    /// Last-axis layer normalization with affine gain/bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, d) = self.dims2(x, "layer_norm")?;
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gain).to_vec(),
            });
        }
        let (data, x_hat, inv_std) =
            kernels::layer_norm(self.data(x), m, d, self.data(gain), self.data(bias));
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push_op(
            vec![m, d],
            data,
            rg,
            Op::LayerNorm { x, gain, bias, x_hat, inv_std },
        ))
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by
    /// `1/(1-p)`. Identity when not training or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.next_f64() < p { 0.0 } else { keep })
            .collect();
        let data: Vec<f64> = self
            .data(x)
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push_op(shape, data, rg, Op::Dropout { x, mask }))
    }

    /// Sum of all elements, as a `[1]` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.data(x).iter().sum();
        let rg = self.rg(x);
        self.push_op(vec![1], vec![s], rg, Op::Sum { x })
    }

    /// Column means of a `[m,n]` matrix, as `[1,n]`.
    pub fn col_mean(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "col_mean")?;
        let data = kernels::col_mean(self.data(x), m, n);
        let rg = self.rg(x);
        Ok(self.push_op(vec![1, n], data, rg, Op::ColMean { x }))
    }

    /// Select rows by index (ascending, in-range, duplicates allowed).
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(x, "gather_rows")?;
        if indices.iter().any(|&i| i >= m) {
            return Err(Error::Contract(format!(
                "gather_rows index out of range for {m} rows"
            )));
        }
        let data = kernels::gather_rows(self.data(x), n, indices);
        let rg = self.rg(x);
        Ok(self.push_op(
            vec![indices.len(), n],
            data,
            rg,
            Op::GatherRows { x, indices: indices.to_vec() },
        ))
    }

    /// Build an `[total, n]` matrix: row `indices[p]` comes from `rows[p]`,
    /// every other row is a copy of the `[1,n]` `fill` row.
    pub fn scatter_rows_fill(
        &mut self,
        rows: Var,
        fill: Var,
        indices: &[usize],
        total: usize,
    ) -> Result<Var> {
        let (u, n) = self.dims2(rows, "scatter_rows_fill")?;
        if u != indices.len() || self.value(fill).numel() != n {
            return Err(Error::Contract(
                "scatter_rows_fill: rows/indices/fill disagree".into(),
            ));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) || indices.iter().any(|&i| i >= total) {
            return Err(Error::Contract(
                "scatter_rows_fill: indices must be strictly increasing and in range".into(),
            ));
        }
        let mut data = Vec::with_capacity(total * n);
        let fill_row = self.data(fill).to_vec();
        let row_data = self.data(rows);
        let mut next = 0usize;
        for i in 0..total {
            if next < indices.len() && indices[next] == i {
                data.extend_from_slice(&row_data[next * n..(next + 1) * n]);
                next += 1;
            } else {
                data.extend_from_slice(&fill_row);
            }
        }
        let rg = self.rg(rows) || self.rg(fill);
        Ok(self.push_op(
            vec![total, n],
            data,
            rg,
            Op::ScatterRowsFill { rows, fill, indices: indices.to_vec() },
        ))
    }

    /// Concatenate rank-2 tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of zero parts".into()));
        }
        let (m, _) = self.dims2(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (mp, np) = self.dims2(p, "concat_cols")?;
            if mp != m {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(np);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                let src = self.data(p);
                data.extend_from_slice(&src[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push_op(vec![m, total], data, rg, Op::ConcatCols { parts: parts.to_vec() }))
    }

    /// Columns `[start, start+len)` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if start + len > n {
            return Err(Error::Contract(format!(
                "slice_cols [{start}, {}) out of {n} columns",
                start + len
            )));
        }
        let src = self.data(x);
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push_op(vec![m, len], data, rg, Op::SliceCols { x, start, len }))
    }

    /// `out[i,j] = x[i,j] * s[i]` for a length-`m` scale vector.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "scale_rows")?;
        if self.value(s).numel() != m {
            return Err(Error::Shape {
                op: "scale_rows",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(s).to_vec(),
            });
        }
        let sv = self.data(s).to_vec();
        let mut data = self.data(x).to_vec();
        for r in 0..m {
            for j in 0..n {
                data[r * n + j] *= sv[r];
            }
        }
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push_op(vec![m, n], data, rg, Op::ScaleRows { x, s }))
    }

    /// Elementwise reciprocal.
    pub fn recip(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.data(x).iter().map(|&v| 1.0 / v).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push_op(shape, data, rg, Op::Recip { x })
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape,
            });
        }
        let data = self.data(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push_op(shape, data, rg, Op::Reshape { x }))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss with upstream gradient 1.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_scaled(loss, 1.0)
    }

    /// Reverse sweep with an explicit upstream weight (used to fold the
    /// `1/n` of a batch mean into per-sample backward passes).
    pub fn backward_scaled(&mut self, loss: Var, upstream: f64) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        {
            let t = &mut self.nodes[loss.0].tensor;
            let g = t.grad.get_or_insert_with(|| vec![0.0; 1]);
            g[0] += upstream;
        }
        for i in (0..=loss.0).rev() {
            if self.nodes[i].tensor.grad.is_none() || !self.nodes[i].tensor.requires_grad {
                continue;
            }
            let gy = self.nodes[i].tensor.grad.take().unwrap();
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Consumed);
            let contribs = self.parent_grads(i, &op, &gy);
            for (parent, contrib) in contribs {
                let t = &mut self.nodes[parent.0].tensor;
                let g = t.grad.get_or_insert_with(|| vec![0.0; t.data.len()]);
                for (gv, cv) in g.iter_mut().zip(&contrib) {
                    *gv += cv;
                }
            }
            self.nodes[i].op = op;
            self.nodes[i].tensor.grad = Some(gy);
        }
        Ok(())
    }

    /// Gradient contributions that node `i` (with upstream `gy`) sends to
    /// each parent that participates in differentiation.
    fn parent_grads(&self, i: usize, op: &Op, gy: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let mut out: Vec<(Var, Vec<f64>)> = Vec::new();
        let mut emit = |tape: &Tape, v: Var, g: Vec<f64>| {
            if tape.rg(v) {
                out.push((v, g));
            }
        };
        let y = &self.nodes[i].tensor;
        match op {
            Op::Leaf | Op::Consumed => {}
            Op::Matmul { a, b } => {
                let (m, k) = { let s = self.shape(*a); (s[0], s[1]) };
                let n = self.shape(*b)[1];
                if self.rg(*a) {
                    let bt = kernels::transpose(self.data(*b), k, n);
                    emit(self, *a, kernels::matmul(gy, &bt, m, n, k));
                }
                if self.rg(*b) {
                    let at = kernels::transpose(self.data(*a), m, k);
                    emit(self, *b, kernels::matmul(&at, gy, k, m, n));
                }
            }
            Op::Transpose { x } => {
                let (n, m) = (y.shape[0], y.shape[1]);
                emit(self, *x, kernels::transpose(gy, n, m));
            }
            Op::Add { a, b } => {
                emit(self, *a, gy.to_vec());
                emit(self, *b, gy.to_vec());
            }
            Op::AddBias { x, bias } => {
                emit(self, *x, gy.to_vec());
                if self.rg(*bias) {
                    let d = self.value(*bias).numel();
                    let mut g = vec![0.0; d];
                    for (idx, &v) in gy.iter().enumerate() {
                        g[idx % d] += v;
                    }
                    emit(self, *bias, g);
                }
            }
            Op::Sub { a, b } => {
                emit(self, *a, gy.to_vec());
                emit(self, *b, gy.iter().map(|&v| -v).collect());
            }
            Op::Mul { a, b } => {
                let (na, nb) = (self.value(*a).numel(), self.value(*b).numel());
                let (xs, ys) = (self.data(*a), self.data(*b));
                if self.rg(*a) {
                    if na == 1 {
                        let g: f64 = gy
                            .iter()
                            .enumerate()
                            .map(|(idx, &v)| v * ys[if nb == 1 { 0 } else { idx }])
                            .sum();
                        emit(self, *a, vec![g]);
                    } else {
                        emit(
                            self,
                            *a,
                            gy.iter()
                                .enumerate()
                                .map(|(idx, &v)| v * ys[if nb == 1 { 0 } else { idx }])
                                .collect(),
                        );
                    }
                }
                if self.rg(*b) {
                    if nb == 1 {
                        let g: f64 = gy
                            .iter()
                            .enumerate()
                            .map(|(idx, &v)| v * xs[if na == 1 { 0 } else { idx }])
                            .sum();
                        emit(self, *b, vec![g]);
                    } else {
                        emit(
                            self,
                            *b,
                            gy.iter()
                                .enumerate()
                                .map(|(idx, &v)| v * xs[if na == 1 { 0 } else { idx }])
                                .collect(),
                        );
                    }
                }
            }
            Op::Div { a, b } => {
                let nb = self.value(*b).numel();
                let (xs, ys) = (self.data(*a), self.data(*b));
                if self.rg(*a) {
                    emit(
                        self,
                        *a,
                        gy.iter()
                            .enumerate()
                            .map(|(idx, &v)| v / ys[if nb == 1 { 0 } else { idx }])
                            .collect(),
                    );
                }
                if self.rg(*b) {
                    if nb == 1 {
                        let d = ys[0];
                        let g: f64 = gy
                            .iter()
                            .enumerate()
                            .map(|(idx, &v)| -v * xs[idx] / (d * d))
                            .sum();
                        emit(self, *b, vec![g]);
                    } else {
                        emit(
                            self,
                            *b,
                            gy.iter()
                                .enumerate()
                                .map(|(idx, &v)| -v * xs[idx] / (ys[idx] * ys[idx]))
                                .collect(),
                        );
                    }
                }
            }
            Op::Scale { x, c } => {
                emit(self, *x, gy.iter().map(|&v| v * c).collect());
            }
            Op::AddConst { x } => {
                emit(self, *x, gy.to_vec());
            }
            Op::Relu { x } => {
                let xs = self.data(*x);
                emit(
                    self,
                    *x,
                    gy.iter()
                        .zip(xs)
                        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                        .collect(),
                );
            }
            Op::Sigmoid { x } => {
                emit(
                    self,
                    *x,
                    gy.iter()
                        .zip(&y.data)
                        .map(|(&g, &s)| g * s * (1.0 - s))
                        .collect(),
                );
            }
            Op::Exp { x } => {
                emit(
                    self,
                    *x,
                    gy.iter().zip(&y.data).map(|(&g, &e)| g * e).collect(),
                );
            }
            Op::Ln { x } => {
                let xs = self.data(*x);
                emit(self, *x, gy.iter().zip(xs).map(|(&g, &v)| g / v).collect());
            }
            Op::Sqrt { x } => {
                emit(
                    self,
                    *x,
                    gy.iter()
                        .zip(&y.data)
                        .map(|(&g, &s)| if s > 0.0 { g * 0.5 / s } else { 0.0 })
                        .collect(),
                );
            }
            Op::Abs { x } => {
                let xs = self.data(*x);
                emit(
                    self,
                    *x,
                    gy.iter()
                        .zip(xs)
                        .map(|(&g, &v)| g * if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })
                        .collect(),
                );
            }
            Op::Clamp { x, lo, hi } => {
                let xs = self.data(*x);
                emit(
                    self,
                    *x,
                    gy.iter()
                        .zip(xs)
                        .map(|(&g, &v)| if v > *lo && v < *hi { g } else { 0.0 })
                        .collect(),
                );
            }
            Op::SoftmaxRows { x } => {
                let (m, n) = (y.shape[0], y.shape[1]);
                let mut g = vec![0.0; m * n];
                for r in 0..m {
                    let yr = &y.data[r * n..(r + 1) * n];
                    let gr = &gy[r * n..(r + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        g[r * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                emit(self, *x, g);
            }
            Op::LayerNorm { x, gain, bias, x_hat, inv_std } => {
                let (m, d) = (y.shape[0], y.shape[1]);
                let gv = self.data(*gain);
                if self.rg(*x) {
                    let mut g = vec![0.0; m * d];
                    for r in 0..m {
                        let gr = &gy[r * d..(r + 1) * d];
                        let hr = &x_hat[r * d..(r + 1) * d];
                        let mut mean_dg = 0.0;
                        let mut mean_dgh = 0.0;
                        for j in 0..d {
                            let dg = gr[j] * gv[j];
                            mean_dg += dg;
                            mean_dgh += dg * hr[j];
                        }
                        mean_dg /= d as f64;
                        mean_dgh /= d as f64;
                        for j in 0..d {
                            let dg = gr[j] * gv[j];
                            g[r * d + j] = inv_std[r] * (dg - mean_dg - hr[j] * mean_dgh);
                        }
                    }
                    emit(self, *x, g);
                }
                if self.rg(*gain) {
                    let mut g = vec![0.0; d];
                    for r in 0..m {
                        for j in 0..d {
                            g[j] += gy[r * d + j] * x_hat[r * d + j];
                        }
                    }
                    emit(self, *gain, g);
                }
                if self.rg(*bias) {
                    let mut g = vec![0.0; d];
                    for r in 0..m {
                        for j in 0..d {
                            g[j] += gy[r * d + j];
                        }
                    }
                    emit(self, *bias, g);
                }
            }
            Op::Dropout { x, mask } => {
                emit(
                    self,
                    *x,
                    gy.iter().zip(mask).map(|(&g, &m)| g * m).collect(),
                );
            }
            Op::Sum { x } => {
                let n = self.value(*x).numel();
                emit(self, *x, vec![gy[0]; n]);
            }
            Op::ColMean { x } => {
                let (m, n) = { let s = self.shape(*x); (s[0], s[1]) };
                let mut g = vec![0.0; m * n];
                for r in 0..m {
                    for j in 0..n {
                        g[r * n + j] = gy[j] / m as f64;
                    }
                }
                emit(self, *x, g);
            }
            Op::GatherRows { x, indices } => {
                let (m, n) = { let s = self.shape(*x); (s[0], s[1]) };
                let mut g = vec![0.0; m * n];
                for (p, &idx) in indices.iter().enumerate() {
                    for j in 0..n {
                        g[idx * n + j] += gy[p * n + j];
                    }
                }
                emit(self, *x, g);
            }
            Op::ScatterRowsFill { rows, fill, indices } => {
                let n = y.shape[1];
                let total = y.shape[0];
                if self.rg(*rows) {
                    let mut g = vec![0.0; indices.len() * n];
                    for (p, &idx) in indices.iter().enumerate() {
                        g[p * n..(p + 1) * n].copy_from_slice(&gy[idx * n..(idx + 1) * n]);
                    }
                    emit(self, *rows, g);
                }
                if self.rg(*fill) {
                    let mut g = vec![0.0; n];
                    let mut next = 0usize;
                    for r in 0..total {
                        if next < indices.len() && indices[next] == r {
                            next += 1;
                            continue;
                        }
                        for j in 0..n {
                            g[j] += gy[r * n + j];
                        }
                    }
                    emit(self, *fill, g);
                }
            }
            Op::ConcatCols { parts } => {
                let m = y.shape[0];
                let total = y.shape[1];
                let mut start = 0usize;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.rg(p) {
                        let mut g = vec![0.0; m * w];
                        for r in 0..m {
                            g[r * w..(r + 1) * w]
                                .copy_from_slice(&gy[r * total + start..r * total + start + w]);
                        }
                        emit(self, p, g);
                    }
                    start += w;
                }
            }
            Op::SliceCols { x, start, len } => {
                let (m, n) = { let s = self.shape(*x); (s[0], s[1]) };
                let mut g = vec![0.0; m * n];
                for r in 0..m {
                    g[r * n + start..r * n + start + len]
                        .copy_from_slice(&gy[r * len..(r + 1) * len]);
                }
                emit(self, *x, g);
            }
            Op::ScaleRows { x, s } => {
                let (m, n) = (y.shape[0], y.shape[1]);
                let sv = self.data(*s);
                let xs = self.data(*x);
                if self.rg(*x) {
                    let mut g = vec![0.0; m * n];
                    for r in 0..m {
                        for j in 0..n {
                            g[r * n + j] = gy[r * n + j] * sv[r];
                        }
                    }
                    emit(self, *x, g);
                }
                if self.rg(*s) {
                    let mut g = vec![0.0; m];
                    for r in 0..m {
                        for j in 0..n {
                            g[r] += gy[r * n + j] * xs[r * n + j];
                        }
                    }
                    emit(self, *s, g);
                }
            }
            Op::Recip { x } => {
                emit(
                    self,
                    *x,
                    gy.iter()
                        .zip(&y.data)
                        .map(|(&g, &r)| -g * r * r)
                        .collect(),
                );
            }
            Op::Reshape { x } => {
                emit(self, *x, gy.to_vec());
            }
        }
        out
    }
}
