use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use super::gemm::gemm;
use super::Tensor;
use crate::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    /// Handle used only to initialize arrays before they are filled.
    pub fn placeholder() -> Self {
        Var(usize::MAX)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddConst(Var),
    MulConst(Var, Tensor),
    Softmax(Var),
    LayerNorm(Var, Vec<f64>),
    Silu(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    Sum(Var),
    RowNorm(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of a forward computation. Nodes are appended in evaluation
/// order, so the node list is already a topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar seed with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `v`; zero when `v` does not influence the seed.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
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

    /// Drops every node recorded after the first `len`, so a prefix (for
    /// example bound parameters) can be reused across evaluations. Handles to
    /// dropped nodes become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn same_len(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if la != lb || self.dims(a) != self.dims(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(Error::dim("matmul_t", format!("[{m}x{k}] x [{n}x{k2}]^T")));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            k,
            1,
            self.value(b).data(),
            1,
            k,
            &mut out,
            false,
        );
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMulT(a, b), &[a, b]))
    }

    /// `x · w + b` with `x: [n×d_in]`, `w: [d_in×d_out]`, `b: [d_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    fn zip(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Var {
        let (r, c) = self.dims(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(Tensor::matrix(r, c, data), op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("add", a, b)?;
        Ok(self.zip(Op::Add(a, b), a, b, |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("sub", a, b)?;
        Ok(self.zip(Op::Sub(a, b), a, b, |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("mul", a, b)?;
        Ok(self.zip(Op::Mul(a, b), a, b, |x, y| x * y))
    }

    fn row_broadcast(
        &mut self,
        name: &'static str,
        x: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (r, c) = self.dims(x);
        let bv = self.value(b);
        if bv.len() != c {
            return Err(Error::dim(
                name,
                format!("row of {c} vs broadcast operand of {}", bv.len()),
            ));
        }
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(f(xv[i * c + j], bv.data()[j]));
            }
        }
        Ok(Tensor::matrix(r, c, data))
    }

    /// Adds the vector `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let value = self.row_broadcast("add_row", x, b, |u, v| u + v)?;
        Ok(self.push(value, Op::AddRow(x, b), &[x, b]))
    }

    /// Multiplies every row of `x` element-wise by the vector `g`.
    pub fn mul_row(&mut self, x: Var, g: Var) -> Result<Var> {
        let value = self.row_broadcast("mul_row", x, g, |u, v| u * v)?;
        Ok(self.push(value, Op::MulRow(x, g), &[x, g]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).map(|v| v * s);
        self.push(value, Op::Scale(x, s), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).map(|v| v + s);
        self.push(value, Op::AddScalar(x), &[x])
    }

    /// Adds a constant tensor (no gradient flows into `c`).
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(Error::dim("add_const", "length mismatch"));
        }
        let (r, cc) = self.dims(x);
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(c.data())
            .map(|(a, b)| a + b)
            .collect();
        Ok(self.push(Tensor::matrix(r, cc, data), Op::AddConst(x), &[x]))
    }

    /// Hadamard product with a constant tensor; the constant is treated as a
    /// stop-gradient.
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(Error::dim("mul_const", "length mismatch"));
        }
        let (r, cc) = self.dims(x);
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(c.data())
            .map(|(a, b)| a * b)
            .collect();
        Ok(self.push(Tensor::matrix(r, cc, data), Op::MulConst(x, c), &[x]))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let xv = self.value(x).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            softmax_row(&xv[i * c..(i + 1) * c], &mut data[i * c..(i + 1) * c]);
        }
        self.push(Tensor::matrix(r, c, data), Op::Softmax(x), &[x])
    }

    /// Row-wise normalization to zero mean and unit variance (no affine).
    pub fn normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let (r, c) = self.dims(x);
        let xv = self.value(x).data();
        let mut data = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                data[i * c + j] = (row[j] - mean) * inv;
            }
            inv_std.push(inv);
        }
        self.push(Tensor::matrix(r, c, data), Op::LayerNorm(x, inv_std), &[x])
    }

    /// Layer normalization with per-feature gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = self.normalize_rows(x, eps);
        let scaled = self.mul_row(n, gain)?;
        self.add_row(scaled, bias)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * sigmoid(v));
        self.push(value, Op::Silu(x), &[x])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let value = Tensor::concat_rows(&tensors)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > self.value(x).rows() {
            return Err(Error::dim("slice_rows", format!("{start}+{len} out of range")));
        }
        let value = self.value(x).slice_rows(start, len);
        Ok(self.push(value, Op::SliceRows(x, start), &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let value = Tensor::concat_cols(&tensors)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > self.value(x).cols() {
            return Err(Error::dim("slice_cols", format!("{start}+{len} out of range")));
        }
        let value = self.value(x).slice_cols(start, len);
        Ok(self.push(value, Op::SliceCols(x, start), &[x]))
    }

    /// Rows of `table` at `indices`, in order (repeats allowed).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::dim("gather_rows", format!("row {bad} out of range")));
        }
        let c = t.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::matrix(indices.len(), c, data);
        Ok(self.push(value, Op::GatherRows(table, indices.to_vec()), &[table]))
    }

    /// Column means, as a `[1×c]` row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let xv = self.value(x).data();
        let mut data = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                data[j] += xv[i * c + j];
            }
        }
        data.iter_mut().for_each(|v| *v /= r as f64);
        self.push(Tensor::matrix(1, c, data), Op::MeanRows(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Euclidean norm of each row, as an `[n×1]` column. The gradient at a
    /// zero row is taken as zero.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let xv = self.value(x).data();
        let data = (0..r)
            .map(|i| xv[i * c..(i + 1) * c].iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        self.push(Tensor::matrix(r, 1, data), Op::RowNorm(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Reverse sweep from a scalar `seed`.
    pub fn backward(&self, seed: Var) -> Result<Gradients> {
        if self.value(seed).len() != 1 {
            return Err(Error::Contract(format!(
                "backward seed must be scalar, got shape {:?}",
                self.value(seed).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[seed.0] = Some(Tensor::full(self.value(seed).shape(), 1.0));

        for i in (0..=seed.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Tensor>], v: Var) -> Option<&'a mut Tensor> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl Fn(usize) -> f64) {
        if let Some(acc) = self.slot(grads, v) {
            for (k, a) in acc.data_mut().iter_mut().enumerate() {
                *a += f(k);
            }
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    // dA = dC · Bᵀ
                    gemm(m, n, k, gd, n, 1, bv, 1, n, ga.data_mut(), true);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    // dB = Aᵀ · dC
                    gemm(k, m, n, av, 1, k, gd, n, 1, gb.data_mut(), true);
                }
            }
            Op::MatMulT(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).0;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    // dA = dC · B
                    gemm(m, n, k, gd, n, 1, bv, k, 1, ga.data_mut(), true);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    // dB = dCᵀ · A
                    gemm(n, m, k, gd, 1, n, av, k, 1, gb.data_mut(), true);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |k| gd[k]);
                self.accumulate(grads, *b, |k| gd[k]);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |k| gd[k]);
                self.accumulate(grads, *b, |k| -gd[k]);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |k| gd[k] * bv[k]);
                self.accumulate(grads, *b, |k| gd[k] * av[k]);
            }
            Op::AddRow(x, b) => {
                let c = self.dims(*x).1;
                self.accumulate(grads, *x, |k| gd[k]);
                if let Some(gb) = self.slot(grads, *b) {
                    let gbd = gb.data_mut();
                    for (k, v) in gd.iter().enumerate() {
                        gbd[k % c] += v;
                    }
                }
            }
            Op::MulRow(x, w) => {
                let c = self.dims(*x).1;
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                self.accumulate(grads, *x, |k| gd[k] * wv[k % c]);
                if let Some(gw) = self.slot(grads, *w) {
                    let gwd = gw.data_mut();
                    for (k, v) in gd.iter().enumerate() {
                        gwd[k % c] += v * xv[k];
                    }
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, |k| gd[k] * s),
            Op::AddScalar(x) | Op::AddConst(x) | Op::Reshape(x) => {
                self.accumulate(grads, *x, |k| gd[k])
            }
            Op::MulConst(x, c) => {
                let cd = c.data();
                self.accumulate(grads, *x, |k| gd[k] * cd[k]);
            }
            Op::Softmax(x) => {
                let (r, c) = self.dims(*x);
                let y = node.value.data();
                if let Some(gx) = self.slot(grads, *x) {
                    let gxd = gx.data_mut();
                    for row in 0..r {
                        let s = row * c;
                        let dot: f64 = (0..c).map(|j| gd[s + j] * y[s + j]).sum();
                        for j in 0..c {
                            gxd[s + j] += y[s + j] * (gd[s + j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm(x, inv_std) => {
                let (r, c) = self.dims(*x);
                let y = node.value.data();
                if let Some(gx) = self.slot(grads, *x) {
                    let gxd = gx.data_mut();
                    let cf = c as f64;
                    for row in 0..r {
                        let s = row * c;
                        let sum_g: f64 = gd[s..s + c].iter().sum();
                        let sum_gy: f64 = (0..c).map(|j| gd[s + j] * y[s + j]).sum();
                        for j in 0..c {
                            gxd[s + j] +=
                                inv_std[row] / cf * (cf * gd[s + j] - sum_g - y[s + j] * sum_gy);
                        }
                    }
                }
            }
            Op::Silu(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |k| {
                    let sg = sigmoid(xv[k]);
                    gd[k] * sg * (1.0 + xv[k] * (1.0 - sg))
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    self.accumulate(grads, *p, |k| gd[offset + k]);
                    offset += len;
                }
            }
            Op::SliceRows(x, start) => {
                let c = self.dims(*x).1;
                let off = start * c;
                if let Some(gx) = self.slot(grads, *x) {
                    for (k, v) in gd.iter().enumerate() {
                        gx.data_mut()[off + k] += v;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut col = 0;
                for p in parts {
                    let pc = self.dims(*p).1;
                    self.accumulate(grads, *p, |k| gd[(k / pc) * total + col + k % pc]);
                    col += pc;
                }
            }
            Op::SliceCols(x, start) => {
                let c = self.dims(*x).1;
                let len = node.value.cols();
                if let Some(gx) = self.slot(grads, *x) {
                    let gxd = gx.data_mut();
                    for (k, v) in gd.iter().enumerate() {
                        gxd[(k / len) * c + start + k % len] += v;
                    }
                }
            }
            Op::GatherRows(table, indices) => {
                let c = self.dims(*table).1;
                if let Some(gt) = self.slot(grads, *table) {
                    let gtd = gt.data_mut();
                    for (r, &src) in indices.iter().enumerate() {
                        for j in 0..c {
                            gtd[src * c + j] += gd[r * c + j];
                        }
                    }
                }
            }
            Op::MeanRows(x) => {
                let (r, c) = self.dims(*x);
                let inv = 1.0 / r as f64;
                self.accumulate(grads, *x, |k| gd[k % c] * inv);
            }
            Op::Sum(x) => self.accumulate(grads, *x, |_| gd[0]),
            Op::RowNorm(x) => {
                let c = self.dims(*x).1;
                let xv = self.value(*x).data();
                let norms = node.value.data();
                self.accumulate(grads, *x, |k| {
                    let n = norms[k / c];
                    if n > 0.0 {
                        gd[k / c] * xv[k] / n
                    } else {
                        0.0
                    }
                });
            }
        }
    }
}

/// Numerically stable softmax of one row into `out`.
pub(crate) fn softmax_row(x: &[f64], out: &mut [f64]) {
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
