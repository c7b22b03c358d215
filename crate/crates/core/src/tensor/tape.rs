use std::sync::Arc;

use super::kernels::{dot, gemm_nt, gemm_tn, transpose};
use super::{as_matrix, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Boolean mask over a `[rows, cols]` matrix; `true` marks an allowed entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(Error::shape(
                "Mask::new",
                format!("{rows}x{cols} mask with {} entries", allowed.len()),
            ));
        }
        Ok(Mask {
            rows,
            cols,
            allowed,
        })
    }

    /// All entries allowed except the diagonal.
    pub fn off_diagonal(n: usize) -> Self {
        let mut allowed = vec![true; n * n];
        for i in 0..n {
            allowed[i * n + i] = false;
        }
        Mask {
            rows: n,
            cols: n,
            allowed,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allowed
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Transpose(Var),
    Reshape(Var),
    ConcatLast(Vec<Var>),
    ConcatRows(Vec<Var>),
    Softmax(Var),
    LogSumExp(Var, Option<Arc<Mask>>),
    Elu(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    NormalizeRows(Var, Vec<f64>),
    GatherRows(Var, Vec<usize>),
    MixRows(Var, Vec<(usize, usize, f64)>),
    GroupDot(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Define-by-run gradient tape.
///
/// Nodes are appended in evaluation order, so every parent index is smaller
/// than its child's and a reverse sweep is a valid topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        self.push("transpose", value, Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        self.push("reshape", value, Op::Reshape(a), &[a])
    }

    // ---- elementwise with suffix broadcasting -----------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast("add", a, b, |x, y| x + y)?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast("sub", a, b, |x, y| x - y)?;
        self.push("sub", value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast("mul", a, b, |x, y| x * y)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.map(a, |x| x * factor);
        self.push("scale", value, Op::Scale(a, factor), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Result<Var> {
        let value = self.map(a, |x| x + offset);
        self.push("add_scalar", value, Op::AddScalar(a), &[a])
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(op, ta, tb)?;
        let n: usize = shape.iter().product();
        let (la, lb) = (ta.len(), tb.len());
        let data = (0..n)
            .map(|i| f(ta.data()[i % la], tb.data()[i % lb]))
            .collect();
        Ok(Tensor::from_parts(shape, data))
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
    }

    // ---- structural ---------------------------------------------------------

    /// Concatenates along the last axis; leading shapes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_last", "no inputs"))?;
        let lead = self.value(*first).shape()[..self.value(*first).shape().len() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let mut total_cols = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s.len() != lead.len() + 1 || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat_last", format!("{:?} vs leading {:?}", s, lead)));
            }
            total_cols += s[s.len() - 1];
        }
        let mut data = Vec::with_capacity(rows * total_cols);
        for r in 0..rows {
            for p in parts {
                let t = self.value(*p);
                let c = t.cols();
                data.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead;
        shape.push(total_cols);
        self.push("concat_last", Tensor::from_parts(shape, data), Op::ConcatLast(parts.to_vec()), parts)
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let (_, cols) = as_matrix("concat_rows", self.value(*first))?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (r, c) = as_matrix("concat_rows", self.value(*p))?;
            if c != cols {
                return Err(Error::shape("concat_rows", format!("{c} columns vs {cols}")));
            }
            rows += r;
            data.extend_from_slice(self.value(*p).data());
        }
        self.push(
            "concat_rows",
            Tensor::from_parts(vec![rows, cols], data),
            Op::ConcatRows(parts.to_vec()),
            parts,
        )
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (n, c) = as_matrix("gather_rows", t)?;
        if let Some(bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {n}")));
        }
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(t.row(r));
        }
        let value = Tensor::from_parts(vec![rows.len(), c], data);
        self.push("gather_rows", value, Op::GatherRows(a, rows.to_vec()), &[a])
    }

    /// Row `r` of the output is `w * a[i] + (1 - w) * a[j]` for entry `(i, j, w)`.
    pub fn mix_rows(&mut self, a: Var, entries: &[(usize, usize, f64)]) -> Result<Var> {
        let t = self.value(a);
        let (n, c) = as_matrix("mix_rows", t)?;
        let mut data = Vec::with_capacity(entries.len() * c);
        for &(i, j, w) in entries {
            if i >= n || j >= n {
                return Err(Error::shape("mix_rows", format!("rows ({i}, {j}) of {n}")));
            }
            let (ri, rj) = (t.row(i), t.row(j));
            data.extend(ri.iter().zip(rj).map(|(x, y)| w * x + (1.0 - w) * y));
        }
        let value = Tensor::from_parts(vec![entries.len(), c], data);
        self.push("mix_rows", value, Op::MixRows(a, entries.to_vec()), &[a])
    }

    /// `a` is `[n, d]`, `b` is `[n * m, d]`; output `[n, m]` holds
    /// `a[i] . b[i * m + k]`.
    pub fn group_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, d) = as_matrix("group_dot", ta)?;
        let (nb, db) = as_matrix("group_dot", tb)?;
        if d != db || n == 0 || nb % n != 0 {
            return Err(Error::shape("group_dot", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let m = nb / n;
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            for k in 0..m {
                data.push(dot(ta.row(i), tb.row(i * m + k)));
            }
        }
        self.push("group_dot", Tensor::from_parts(vec![n, m], data), Op::GroupDot(a, b), &[a, b])
    }

    // ---- row-wise normalizations -----------------------------------------

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let value = softmax_rows(self.value(a), None)?;
        self.push("softmax", value, Op::Softmax(a), &[a])
    }

    /// Softmax over the last axis restricted to `mask`; masked-out entries are exactly 0.
    pub fn masked_softmax(&mut self, a: Var, mask: &Arc<Mask>) -> Result<Var> {
        let value = softmax_rows(self.value(a), Some(mask))?;
        self.push("masked_softmax", value, Op::Softmax(a), &[a])
    }

    /// `log(sum(exp(x)))` over the last axis, optionally restricted to `mask`.
    pub fn logsumexp(&mut self, a: Var, mask: Option<&Arc<Mask>>) -> Result<Var> {
        let t = self.value(a);
        check_mask("logsumexp", t, mask)?;
        let c = t.cols();
        let rows = t.rows();
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &t.data()[r * c..(r + 1) * c];
            let allowed = |j: usize| mask.is_none_or(|m| m.allowed[r * c + j]);
            let max = (0..c)
                .filter(|&j| allowed(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::invalid(format!("logsumexp: row {r} has no allowed entries")));
            }
            let s: f64 = (0..c).filter(|&j| allowed(j)).map(|j| (row[j] - max).exp()).sum();
            out.push(max + s.ln());
        }
        let value = Tensor::from_parts(reduced_shape(t.shape()), out);
        self.push("logsumexp", value, Op::LogSumExp(a, mask.cloned()), &[a])
    }

    /// Scales each row (last axis) to unit Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        let mut norms = Vec::with_capacity(t.rows());
        let mut data = Vec::with_capacity(t.len());
        for r in 0..t.rows() {
            let row = &t.data()[r * c..(r + 1) * c];
            let norm = dot(row, row).sqrt();
            if norm == 0.0 {
                return Err(Error::invalid(format!("normalize_rows: row {r} has zero norm")));
            }
            norms.push(norm);
            data.extend(row.iter().map(|x| x / norm));
        }
        let value = Tensor::from_parts(t.shape().to_vec(), data);
        self.push("normalize_rows", value, Op::NormalizeRows(a, norms), &[a])
    }

    // ---- activations ------------------------------------------------------

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, |x| if x > 0.0 { x } else { x.exp_m1() });
        self.push("elu", value, Op::Elu(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, |x| x.max(0.0));
        self.push("relu", value, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let value = self.map(a, |x| if x > 0.0 { x } else { slope * x });
        self.push("leaky_relu", value, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, f64::tanh);
        self.push("tanh", value, Op::Tanh(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, f64::exp);
        self.push("exp", value, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, f64::ln);
        self.push("log", value, Op::Log(a), &[a])
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.push("sum", value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.push("mean", value, Op::Mean(a), &[a])
    }

    /// Sums over the last axis.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        let data = (0..t.rows())
            .map(|r| t.data()[r * c..(r + 1) * c].iter().sum())
            .collect();
        let value = Tensor::from_parts(reduced_shape(t.shape()), data);
        self.push("sum_last", value, Op::SumLast(a), &[a])
    }

    // ---- backward ---------------------------------------------------------

    /// Accumulates `d loss / d leaf` into every trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[idx].op {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { op: "backward" });
                }
                let node = &mut self.nodes[idx];
                match &mut node.grad {
                    Some(existing) => {
                        for (e, v) in existing.data_mut().iter_mut().zip(&g) {
                            *e += v;
                        }
                    }
                    None => node.grad = Some(Tensor::from_parts(node.value.shape().to_vec(), g)),
                }
                continue;
            }
            for (parent, contribution) in self.local_grads(idx, &g)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contribution) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `idx` towards each of its parents.
    fn local_grads(&self, idx: usize, g: &[f64]) -> Result<Vec<(Var, Vec<f64>)>> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: &Var| &self.nodes[v.0].value;
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, k) = as_matrix("matmul", ta)?;
                let n = tb.cols();
                if needs(a) {
                    let mut ga = vec![0.0; m * k];
                    gemm_nt(g, tb.data(), &mut ga, m, n, k);
                    res.push((*a, ga));
                }
                if needs(b) {
                    let mut gb = vec![0.0; k * n];
                    gemm_tn(ta.data(), g, &mut gb, k, m, n);
                    res.push((*b, gb));
                }
            }
            Op::Add(a, b) => {
                res.push((*a, reduce_to(g, val(a).len(), |_| 1.0)));
                res.push((*b, reduce_to(g, val(b).len(), |_| 1.0)));
            }
            Op::Sub(a, b) => {
                res.push((*a, reduce_to(g, val(a).len(), |_| 1.0)));
                res.push((*b, reduce_to(g, val(b).len(), |_| -1.0)));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (la, lb) = (ta.len(), tb.len());
                res.push((*a, reduce_to(g, la, |i| tb.data()[i % lb])));
                res.push((*b, reduce_to(g, lb, |i| ta.data()[i % la])));
            }
            Op::Scale(a, f) => res.push((*a, g.iter().map(|x| x * f).collect())),
            Op::AddScalar(a) | Op::Reshape(a) => res.push((*a, g.to_vec())),
            Op::Transpose(a) => {
                let (m, n) = as_matrix("transpose", out)?;
                res.push((*a, transpose(g, m, n)));
            }
            Op::ConcatLast(parts) => {
                let rows = out.rows();
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let c = val(p).cols();
                    let mut gp = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        gp.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                    }
                    offset += c;
                    res.push((*p, gp));
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = val(p).len();
                    res.push((*p, g[offset..offset + len].to_vec()));
                    offset += len;
                }
            }
            Op::GatherRows(a, rows) => {
                let c = out.cols();
                let mut ga = vec![0.0; val(a).len()];
                for (k, &r) in rows.iter().enumerate() {
                    for j in 0..c {
                        ga[r * c + j] += g[k * c + j];
                    }
                }
                res.push((*a, ga));
            }
            Op::MixRows(a, entries) => {
                let c = out.cols();
                let mut ga = vec![0.0; val(a).len()];
                for (k, &(i, j, w)) in entries.iter().enumerate() {
                    for col in 0..c {
                        let gv = g[k * c + col];
                        ga[i * c + col] += w * gv;
                        ga[j * c + col] += (1.0 - w) * gv;
                    }
                }
                res.push((*a, ga));
            }
            Op::GroupDot(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let d = ta.cols();
                let n = ta.rows();
                let m = out.cols();
                let mut ga = vec![0.0; ta.len()];
                let mut gb = vec![0.0; tb.len()];
                for i in 0..n {
                    let arow = ta.row(i);
                    for k in 0..m {
                        let gv = g[i * m + k];
                        let r = i * m + k;
                        let brow = tb.row(r);
                        for j in 0..d {
                            ga[i * d + j] += gv * brow[j];
                            gb[r * d + j] += gv * arow[j];
                        }
                    }
                }
                res.push((*a, ga));
                res.push((*b, gb));
            }
            Op::Softmax(a) => {
                let c = out.cols();
                let y = out.data();
                let mut ga = vec![0.0; y.len()];
                for r in 0..out.rows() {
                    let span = r * c..(r + 1) * c;
                    let inner = dot(&g[span.clone()], &y[span.clone()]);
                    for j in span {
                        ga[j] = y[j] * (g[j] - inner);
                    }
                }
                res.push((*a, ga));
            }
            Op::LogSumExp(a, mask) => {
                let x = val(a);
                let c = x.cols();
                let mut ga = vec![0.0; x.len()];
                for r in 0..x.rows() {
                    let lse = out.data()[r];
                    for j in 0..c {
                        let k = r * c + j;
                        if mask.as_ref().is_none_or(|m| m.allowed[k]) {
                            ga[k] = g[r] * (x.data()[k] - lse).exp();
                        }
                    }
                }
                res.push((*a, ga));
            }
            Op::NormalizeRows(a, norms) => {
                let c = out.cols();
                let y = out.data();
                let mut ga = vec![0.0; y.len()];
                for (r, norm) in norms.iter().enumerate() {
                    let span = r * c..(r + 1) * c;
                    let inner = dot(&g[span.clone()], &y[span.clone()]);
                    for j in span {
                        ga[j] = (g[j] - y[j] * inner) / norm;
                    }
                }
                res.push((*a, ga));
            }
            Op::Elu(a) => {
                let x = val(a).data();
                res.push((*a, zip_map(g, x, |gv, xv| if xv > 0.0 { gv } else { gv * xv.exp() })));
            }
            Op::Relu(a) => {
                let x = val(a).data();
                res.push((*a, zip_map(g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 })));
            }
            Op::LeakyRelu(a, slope) => {
                let x = val(a).data();
                res.push((*a, zip_map(g, x, |gv, xv| if xv > 0.0 { gv } else { gv * slope })));
            }
            Op::Tanh(a) => res.push((*a, zip_map(g, out.data(), |gv, y| gv * (1.0 - y * y)))),
            Op::Exp(a) => res.push((*a, zip_map(g, out.data(), |gv, y| gv * y))),
            Op::Log(a) => res.push((*a, zip_map(g, val(a).data(), |gv, x| gv / x))),
            Op::Sum(a) => res.push((*a, vec![g[0]; val(a).len()])),
            Op::Mean(a) => {
                let n = val(a).len();
                res.push((*a, vec![g[0] / n as f64; n]));
            }
            Op::SumLast(a) => {
                let c = val(a).cols();
                res.push((*a, g.iter().flat_map(|&gv| std::iter::repeat_n(gv, c)).collect()));
            }
        }
        Ok(res)
    }
}

fn zip_map(g: &[f64], x: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    g.iter().zip(x).map(|(&a, &b)| f(a, b)).collect()
}

/// Sums `g[i] * scale(i)` into slot `i % len` (undoes suffix broadcasting).
fn reduce_to(g: &[f64], len: usize, scale: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, gv) in g.iter().enumerate() {
        out[i % len] += gv * scale(i);
    }
    out
}

fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb || b.len() == 1 && !a.is_empty() {
        Ok(sa.to_vec())
    } else if a.len() == 1 {
        Ok(sb.to_vec())
    } else if sa.ends_with(sb) {
        Ok(sa.to_vec())
    } else if sb.ends_with(sa) {
        Ok(sb.to_vec())
    } else {
        Err(Error::shape(op, format!("cannot broadcast {sa:?} with {sb:?}")))
    }
}

fn reduced_shape(shape: &[usize]) -> Vec<usize> {
    match shape.len() {
        0 | 1 => vec![1],
        n => shape[..n - 1].to_vec(),
    }
}

fn check_mask(op: &'static str, t: &Tensor, mask: Option<&Arc<Mask>>) -> Result<()> {
    match mask {
        Some(m) if m.allowed.len() != t.len() || m.cols != t.cols() => Err(Error::shape(
            op,
            format!("mask {}x{} vs input {:?}", m.rows, m.cols, t.shape()),
        )),
        _ => Ok(()),
    }
}

fn softmax_rows(t: &Tensor, mask: Option<&Arc<Mask>>) -> Result<Tensor> {
    check_mask("softmax", t, mask)?;
    let c = t.cols();
    let mut data = vec![0.0; t.len()];
    for r in 0..t.rows() {
        let base = r * c;
        let allowed = |j: usize| mask.is_none_or(|m| m.allowed[base + j]);
        let max = (0..c)
            .filter(|&j| allowed(j))
            .map(|j| t.data()[base + j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::invalid(format!("softmax: row {r} has no allowed entries")));
        }
        let mut total = 0.0;
        for j in (0..c).filter(|&j| allowed(j)) {
            let e = (t.data()[base + j] - max).exp();
            data[base + j] = e;
            total += e;
        }
        for v in &mut data[base..base + c] {
            *v /= total;
        }
    }
    Ok(Tensor::from_parts(t.shape().to_vec(), data))
}
