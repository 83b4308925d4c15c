//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only arena of nodes. Each operation pushes one node holding
//! its value and a record of its parents, so arena order is already a topological order
//! and [`Graph::backward`] is a single reverse sweep that visits every producer once.
//! Gradients accumulate across calls until [`Graph::zero_grad`].

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{degenerate_err, dim_err, usage_err, Error, Result};
use crate::tensor::{matmul_raw, transpose_raw, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    NormalizeRows(Var),
    Cosine(Var, Var),
    /// Maximum over axis 0 of a matrix; stores the winning row per column.
    MaxRows(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    SliceRows(Var, usize),
    Reshape(Var),
    AvgPool2x2 { x: Var, w: usize },
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    MeanRows(Var),
    Gather(Var, Vec<usize>),
    BceWithLogits(Var, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    matmul_fault: bool,
}

fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(dim_err!("axis {axis} out of range for shape {shape:?}"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(alloc::format!("output of {what}")))
    }
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the largest element; ties resolve to the lowest index.
pub(crate) fn argmax_first(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(xs.map(|x| libm::exp(x - m)).sum::<f64>())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of `v` (zeros if nothing has flowed into it yet).
    pub fn grad(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        match &node.grad {
            Some(g) => Tensor::from_parts(node.value.shape().to_vec(), g.clone()),
            None => Tensor::zeros(node.value.shape()),
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Test hook: makes the matmul backward rule wrong so gradient checks can be shown to fail.
    #[doc(hidden)]
    pub fn inject_matmul_backward_fault(&mut self) {
        self.matmul_fault = true;
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, parents: &[Var], what: &str) -> Result<Var> {
        check_finite(&data, what)?;
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_raw(Tensor::from_parts(shape, data), op, requires_grad))
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return Err(dim_err!("matmul inner extents {k} and {k2} differ"));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b], "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        let out = transpose_raw(self.value(a).data(), r, c);
        self.push(vec![c, r], out, Op::Transpose(a), &[a], "transpose")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(dim_err!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        self.push(self.value(a).shape().to_vec(), out, Op::Add(a, b), &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x - y).collect();
        self.push(self.value(a).shape().to_vec(), out, Op::Sub(a, b), &[a, b], "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        self.push(self.value(a).shape().to_vec(), out, Op::Mul(a, b), &[a, b], "mul")
    }

    /// `x[m×n] + row[n]`, the row broadcast over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        if self.value(row).len() != n {
            return Err(dim_err!("add_row: row of length {} against {n} columns", self.value(row).len()));
        }
        let r = self.value(row).data();
        let out = self.value(x).data().chunks(n).flat_map(|xs| xs.iter().zip(r).map(|(a, b)| a + b)).collect();
        self.push(vec![m, n], out, Op::AddRow(x, row), &[x, row], "add_row")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).data().iter().map(|v| v * c).collect();
        self.push(self.value(x).shape().to_vec(), out, Op::Scale(x, c), &[x], "scale")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).data().iter().map(|&v| libm::tanh(v)).collect();
        self.push(self.value(x).shape().to_vec(), out, Op::Tanh(x), &[x], "tanh")
    }

    /// Softmax along `axis`, max-subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let (outer, len, inner) = axis_split(&shape, axis)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let m = (0..len).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..len {
                    let e = libm::exp(src[idx(j)] - m);
                    out[idx(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    out[idx(j)] /= z;
                }
            }
        }
        self.push(shape, out, Op::Softmax(x, axis), &[x], "softmax")
    }

    /// Log-softmax along `axis` via log-sum-exp.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let (outer, len, inner) = axis_split(&shape, axis)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let lse = log_sum_exp((0..len).map(|j| src[idx(j)]));
                for j in 0..len {
                    out[idx(j)] = src[idx(j)] - lse;
                }
            }
        }
        self.push(shape, out, Op::LogSoftmax(x, axis), &[x], "log_softmax")
    }

    /// Scales every row to unit L2 norm. A zero row is a degenerate input.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * n);
        for (r, row) in src.chunks(n).enumerate() {
            let nr = norm(row);
            if nr == 0.0 {
                return Err(degenerate_err!("row {r} has zero norm"));
            }
            out.extend(row.iter().map(|v| v / nr));
        }
        self.push(self.value(x).shape().to_vec(), out, Op::NormalizeRows(x), &[x], "normalize_rows")
    }

    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        self.same_shape(u, v, "cosine_similarity")?;
        let (a, b) = (self.value(u).data(), self.value(v).data());
        let (na, nb) = (norm(a), norm(b));
        if na == 0.0 || nb == 0.0 {
            return Err(degenerate_err!("cosine similarity of a zero-norm vector"));
        }
        let c = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
        self.push(vec![1], vec![c], Op::Cosine(u, v), &[u, v], "cosine_similarity")
    }

    /// Maximum over every element of `x`, with the flat index of the winner.
    /// Ties go to the lowest flat index.
    pub fn max_over_locations(&mut self, x: Var) -> Result<(Var, usize)> {
        let n = self.value(x).len();
        let flat = self.reshape(x, &[n, 1])?;
        let m = self.max_rows(flat)?;
        let idx = match &self.nodes[m.0].op {
            Op::MaxRows(_, w) => w[0],
            _ => unreachable!(),
        };
        let s = self.reshape(m, &[1])?;
        Ok((s, idx))
    }

    /// Column-wise maximum of a matrix, `m×n -> 1×n`; ties to the lowest row.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        let t = self.value(x);
        let mut winners = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        for c in 0..n {
            let (r, v) = argmax_first((0..m).map(|r| t.data()[r * n + c])).ok_or_else(|| dim_err!("max over empty map"))?;
            winners.push(r);
            out.push(v);
        }
        self.push(vec![1, n], out, Op::MaxRows(x, winners), &[x], "max_rows")
    }

    /// The argmax rows chosen by a `max_rows` node.
    pub fn max_winners(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::MaxRows(_, w) => Some(w),
            _ => None,
        }
    }

    /// Winners of every max node, in graph order. Two graphs built by the same code route
    /// gradients identically through their maxima iff their signatures agree.
    pub fn max_signature(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::MaxRows(_, w) => Some(w.iter().copied()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| usage_err!("concat of zero parts"))?;
        let base = self.value(*first).shape().to_vec();
        axis_split(&base, axis)?;
        let mut total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(dim_err!("concat: shape {s:?} incompatible with {base:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis)?;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let len = t.shape()[axis];
                out.extend_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(shape, out, Op::Concat(parts.to_vec(), axis), parts, "concat")
    }

    /// Rows `start..start+len` of a matrix (or elements of a vector).
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let rows = shape[0];
        if len == 0 || start + len > rows {
            return Err(dim_err!("slice {start}..{} out of {rows} rows", start + len));
        }
        let inner: usize = shape[1..].iter().product();
        let out = self.value(x).data()[start * inner..(start + len) * inner].to_vec();
        let mut new_shape = shape;
        new_shape[0] = len;
        self.push(new_shape, out, Op::SliceRows(x, start), &[x], "slice_rows")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let (s, d) = (t.shape().to_vec(), t.into_data());
        self.push(s, d, Op::Reshape(x), &[x], "reshape")
    }

    /// 2×2 average pooling of a feature map stored as `(h·w)×d` rows in row-major grid order.
    pub fn avg_pool2x2(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (m, d) = self.dims2(x)?;
        if m != h * w || h % 2 != 0 || w % 2 != 0 {
            return Err(dim_err!("avg_pool2x2 on {m} rows as {h}x{w} grid"));
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = vec![0.0; ho * wo * d];
        for i in 0..ho {
            for j in 0..wo {
                let dst = &mut out[(i * wo + j) * d..(i * wo + j + 1) * d];
                for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let r = (2 * i + di) * w + 2 * j + dj;
                    for (o, v) in dst.iter_mut().zip(&src[r * d..(r + 1) * d]) {
                        *o += 0.25 * v;
                    }
                }
            }
        }
        self.push(vec![ho * wo, d], out, Op::AvgPool2x2 { x, w }, &[x], "avg_pool2x2")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x), &[x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(vec![1], vec![s], Op::Mean(x), &[x], "mean")
    }

    /// Sum over the last axis: `m×n -> m`.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        let out = self.value(x).data().chunks(n).map(|r| r.iter().sum()).collect();
        self.push(vec![m], out, Op::SumLast(x), &[x], "sum_last")
    }

    /// Mean over rows: `m×n -> 1×n`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        let mut out = vec![0.0; n];
        for row in self.value(x).data().chunks(n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v / m as f64;
            }
        }
        self.push(vec![1, n], out, Op::MeanRows(x), &[x], "mean_rows")
    }

    /// Picks flat elements by index into a vector.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if indices.is_empty() || indices.iter().any(|&i| i >= t.len()) {
            return Err(dim_err!("gather indices out of range for {} elements", t.len()));
        }
        let out = indices.iter().map(|&i| t.data()[i]).collect();
        self.push(vec![indices.len()], out, Op::Gather(x, indices.to_vec()), &[x], "gather")
    }

    /// Mean binary cross-entropy between logits `x` and targets in `[0,1]`.
    pub fn bce_with_logits(&mut self, x: Var, targets: &[f64]) -> Result<Var> {
        let t = self.value(x);
        if t.len() != targets.len() {
            return Err(dim_err!("bce: {} logits vs {} targets", t.len(), targets.len()));
        }
        let n = t.len() as f64;
        let l: f64 = t
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + libm::log1p(libm::exp(-libm::fabs(z))))
            .sum::<f64>()
            / n;
        self.push(vec![1], vec![l], Op::BceWithLogits(x, targets.to_vec()), &[x], "bce_with_logits")
    }

    /// Accumulates `d root / d node` into every node reachable from `root`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(usage_err!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            ));
        }
        let mut pass: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        pass[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = pass[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut pass)?;
            check_finite(&g, "gradient")?;
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], pass: &mut [Option<Vec<f64>>]) -> Result<()> {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = pass[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        let out = self.nodes[i].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2()?;
                let (_, n) = self.nodes[b.0].value.dims2()?;
                let fault = if self.matmul_fault { 1.5 } else { 1.0 };
                acc(*a, &mut |s| {
                    let bt = transpose_raw(val(*b), k, n);
                    let ga = matmul_raw(g, &bt, m, n, k);
                    s.iter_mut().zip(ga).for_each(|(x, y)| *x += fault * y);
                });
                acc(*b, &mut |s| {
                    let at = transpose_raw(val(*a), m, k);
                    let gb = matmul_raw(&at, g, k, m, n);
                    s.iter_mut().zip(gb).for_each(|(x, y)| *x += y);
                });
            }
            Op::Transpose(a) => {
                let (r, c) = self.nodes[a.0].value.dims2()?;
                acc(*a, &mut |s| {
                    let gt = transpose_raw(g, c, r);
                    s.iter_mut().zip(gt).for_each(|(x, y)| *x += y);
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                acc(*a, &mut |s| {
                    for ((x, gy), bv) in s.iter_mut().zip(g).zip(val(*b)) {
                        *x += gy * bv;
                    }
                });
                acc(*b, &mut |s| {
                    for ((x, gy), av) in s.iter_mut().zip(g).zip(val(*a)) {
                        *x += gy * av;
                    }
                });
            }
            Op::AddRow(x, row) => {
                let n = self.nodes[row.0].value.len();
                acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(a, b)| *a += b));
                acc(*row, &mut |s| {
                    for gr in g.chunks(n) {
                        s.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(a, b)| *a += c * b)),
            Op::Tanh(x) => acc(*x, &mut |s| {
                for ((a, gy), y) in s.iter_mut().zip(g).zip(out) {
                    *a += gy * (1.0 - y * y);
                }
            }),
            Op::Softmax(x, axis) | Op::LogSoftmax(x, axis) => {
                let is_log = matches!(self.nodes[i].op, Op::LogSoftmax(..));
                let (outer, len, inner) = axis_split(self.nodes[i].value.shape(), *axis)?;
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        for k in 0..inner {
                            let idx = |j: usize| (o * len + j) * inner + k;
                            if is_log {
                                let gsum: f64 = (0..len).map(|j| g[idx(j)]).sum();
                                for j in 0..len {
                                    s[idx(j)] += g[idx(j)] - libm::exp(out[idx(j)]) * gsum;
                                }
                            } else {
                                let gy: f64 = (0..len).map(|j| g[idx(j)] * out[idx(j)]).sum();
                                for j in 0..len {
                                    s[idx(j)] += out[idx(j)] * (g[idx(j)] - gy);
                                }
                            }
                        }
                    }
                });
            }
            Op::NormalizeRows(x) => {
                let (_, n) = self.nodes[x.0].value.dims2()?;
                acc(*x, &mut |s| {
                    for ((srow, grow), (xrow, yrow)) in s
                        .chunks_mut(n)
                        .zip(g.chunks(n))
                        .zip(val(*x).chunks(n).zip(out.chunks(n)))
                    {
                        let nr = norm(xrow);
                        let yg = dot(yrow, grow);
                        for ((a, gv), yv) in srow.iter_mut().zip(grow).zip(yrow) {
                            *a += (gv - yv * yg) / nr;
                        }
                    }
                });
            }
            Op::Cosine(u, v) => {
                let (a, b) = (val(*u), val(*v));
                let (na, nb) = (norm(a), norm(b));
                let c = out[0];
                let g0 = g[0];
                acc(*u, &mut |s| {
                    for ((x, av), bv) in s.iter_mut().zip(a).zip(b) {
                        *x += g0 * (bv / (na * nb) - c * av / (na * na));
                    }
                });
                acc(*v, &mut |s| {
                    for ((x, av), bv) in s.iter_mut().zip(a).zip(b) {
                        *x += g0 * (av / (na * nb) - c * bv / (nb * nb));
                    }
                });
            }
            Op::MaxRows(x, winners) => {
                let (_, n) = self.nodes[x.0].value.dims2()?;
                acc(*x, &mut |s| {
                    for (c, &r) in winners.iter().enumerate() {
                        s[r * n + c] += g[c];
                    }
                });
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = axis_split(self.nodes[i].value.shape(), *axis)?;
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.shape()[*axis];
                    acc(*p, &mut |s| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            s[o * len * inner..(o + 1) * len * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, b)| *a += b);
                        }
                    });
                    offset += len;
                }
            }
            Op::SliceRows(x, start) => {
                let inner: usize = self.nodes[x.0].value.shape()[1..].iter().product();
                acc(*x, &mut |s| {
                    s[start * inner..start * inner + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(a, b)| *a += b);
                });
            }
            Op::Reshape(x) => acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(a, b)| *a += b)),
            Op::AvgPool2x2 { x, w } => {
                let (_, d) = self.nodes[x.0].value.dims2()?;
                let wo = w / 2;
                acc(*x, &mut |s| {
                    for (o, grow) in g.chunks(d).enumerate() {
                        let (i, j) = (o / wo, o % wo);
                        for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let r = (2 * i + di) * w + 2 * j + dj;
                            s[r * d..(r + 1) * d]
                                .iter_mut()
                                .zip(grow)
                                .for_each(|(a, b)| *a += 0.25 * b);
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |s| s.iter_mut().for_each(|a| *a += g[0])),
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len() as f64;
                acc(*x, &mut |s| s.iter_mut().for_each(|a| *a += g[0] / n));
            }
            Op::SumLast(x) => {
                let (_, n) = self.nodes[x.0].value.dims2()?;
                acc(*x, &mut |s| {
                    for (srow, gv) in s.chunks_mut(n).zip(g) {
                        srow.iter_mut().for_each(|a| *a += gv);
                    }
                });
            }
            Op::MeanRows(x) => {
                let (m, n) = self.nodes[x.0].value.dims2()?;
                acc(*x, &mut |s| {
                    for srow in s.chunks_mut(n) {
                        srow.iter_mut().zip(g).for_each(|(a, b)| *a += b / m as f64);
                    }
                });
            }
            Op::Gather(x, idx) => acc(*x, &mut |s| {
                for (&k, gv) in idx.iter().zip(g) {
                    s[k] += gv;
                }
            }),
            Op::BceWithLogits(x, targets) => {
                let n = targets.len() as f64;
                acc(*x, &mut |s| {
                    for ((a, &z), &y) in s.iter_mut().zip(val(*x)).zip(targets) {
                        let sig = 1.0 / (1.0 + libm::exp(-z));
                        *a += g[0] * (sig - y) / n;
                    }
                });
            }
        }
        Ok(())
    }
}
