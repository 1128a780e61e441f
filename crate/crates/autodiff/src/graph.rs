//! Tensor-level tape for reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so walking them backwards is a
//! reverse topological order and every node is visited exactly once.

use crate::error::{NetError, Result};
use crate::kernels;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    DotConst(Var, Tensor<T>),
    SumAll(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single forward pass. Build it, read values, then call [`Graph::backward`].
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<Option<Var>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> NetError {
    NetError::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn dims2(op: &'static str, t: &[usize]) -> Result<(usize, usize)> {
    match t {
        [r, c] => Ok((*r, *c)),
        _ => Err(NetError::Shape {
            op,
            lhs: t.to_vec(),
            rhs: vec![],
        }),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(NetError::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push("constant", t, Op::Leaf, false)
    }

    /// Loads a parameter from the store. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        if let Some(Some(v)) = self.params.get(id.index()) {
            return Ok(*v);
        }
        let e = store.entry(id);
        let v = self.push("param", e.value.clone(), Op::Param, e.trainable)?;
        if self.params.len() <= id.index() {
            self.params.resize(id.index() + 1, None);
        }
        self.params[id.index()] = Some(v);
        Ok(v)
    }

    /// `a[n,k] * b[k,m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = dims2("matmul", self.shape(a))?;
        let (k2, m) = dims2("matmul", self.shape(b))?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); n * m];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul", Tensor::new(&[n, m], out)?, Op::MatMul(a, b), rg)
    }

    /// `a[n,k] * b[m,k]^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = dims2("matmul_nt", self.shape(a))?;
        let (m, k2) = dims2("matmul_nt", self.shape(b))?;
        if k != k2 {
            return Err(shape_err("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); n * m];
        kernels::matmul_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul_nt", Tensor::new(&[n, m], out)?, Op::MatMulNT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push("add", out, Op::Add(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push("mul", out, Op::Mul(a, b), rg)
    }

    /// Adds a vector (length = last axis of `a`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let cols = self.value(a).cols();
        if self.value(row).numel() != cols {
            return Err(shape_err("add_row", self.shape(a), self.shape(row)));
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for chunk in out.data_mut().chunks_exact_mut(cols) {
            for (o, &b) in chunk.iter_mut().zip(&r) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push("add_row", out, Op::AddRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).map(|v| v * c);
        let rg = self.rg(a);
        self.push("scale", out, Op::Scale(a, c), rg)
    }

    /// Adds a constant scalar to every element.
    pub fn add_const(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).map(|v| v + c);
        let rg = self.rg(a);
        self.push("add_const", out, Op::AddConst(a), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(kernels::gelu);
        let rg = self.rg(a);
        self.push("gelu", out, Op::Gelu(a), rg)
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(gain).numel() != cols || self.value(bias).numel() != cols {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gain)));
        }
        let rows = self.value(x).rows();
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / cols as f64;
            let var = row
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mean;
                    d * d
                })
                .sum::<f64>()
                / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = T::of(is);
            for j in 0..cols {
                let h = T::of((row[j].as_f64() - mean) * is);
                xhat[r * cols + j] = h;
                out[r * cols + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::new(self.shape(x), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let cols = self.value(a).cols();
        let mut out = vec![T::zero(); self.value(a).numel()];
        kernels::softmax_rows(self.value(a).data(), &mut out, cols);
        let out = Tensor::new(self.shape(a), out)?;
        let rg = self.rg(a);
        self.push("softmax_rows", out, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let cols = self.value(a).cols();
        let mut out = vec![T::zero(); self.value(a).numel()];
        kernels::log_softmax_rows(self.value(a).data(), &mut out, cols);
        let out = Tensor::new(self.shape(a), out)?;
        let rg = self.rg(a);
        self.push("log_softmax_rows", out, Op::LogSoftmaxRows(a), rg)
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = dims2("slice_cols", self.shape(x))?;
        if start + len > cols {
            return Err(shape_err("slice_cols", self.shape(x), &[start, len]));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let out = Tensor::new(&[rows, len], out)?;
        let rg = self.rg(x);
        self.push("slice_cols", out, Op::SliceCols { x, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NetError::Invalid("concat_cols of nothing".into()))?;
        let (rows, _) = dims2("concat_cols", self.shape(*first))?;
        let mut total = 0;
        for &p in parts {
            let (r, c) = dims2("concat_cols", self.shape(p))?;
            if r != rows {
                return Err(shape_err("concat_cols", self.shape(*first), self.shape(p)));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(&[rows, total], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NetError::Invalid("concat_rows of nothing".into()))?;
        let (_, cols) = dims2("concat_rows", self.shape(*first))?;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = dims2("concat_rows", self.shape(p))?;
            if c != cols {
                return Err(shape_err("concat_rows", self.shape(*first), self.shape(p)));
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(&[rows, cols], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        self.push("reshape", out, Op::Reshape(x), rg)
    }

    /// `sum_i x_i * w_i` with a constant weight tensor.
    pub fn dot_const(&mut self, x: Var, w: Tensor<T>) -> Result<Var> {
        if self.value(x).numel() != w.numel() {
            return Err(shape_err("dot_const", self.shape(x), w.shape()));
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(w.data())
            .map(|(&a, &b)| a.as_f64() * b.as_f64())
            .sum::<f64>();
        let rg = self.rg(x);
        self.push("dot_const", Tensor::scalar(T::of(s)), Op::DotConst(x, w), rg)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().map(|v| v.as_f64()).sum::<f64>();
        let rg = self.rg(x);
        self.push("sum_all", Tensor::scalar(T::of(s)), Op::SumAll(x), rg)
    }

    /// Reverse-mode accumulation from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let rv = &self.nodes[root.0].value;
        if rv.numel() != 1 {
            return Err(NetError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(rv.shape(), T::one()));

        for idx in (0..=root.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &gy, &mut grads)?;
            grads[idx] = Some(gy);
        }

        let mut params = Vec::with_capacity(self.params.len());
        for p in &self.params {
            params.push(p.and_then(|v| grads[v.0].take()));
        }
        Ok(Gradients { params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        if let Some(acc) = grads[v.0].as_mut() {
            acc.add_assign(&g);
        } else {
            grads[v.0] = Some(g);
        }
    }

    fn propagate(&self, node: &Node<T>, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (n, k) = dims2("matmul", self.shape(*a))?;
                let m = self.value(*b).cols();
                if self.rg(*a) {
                    let mut ga = vec![T::zero(); n * k];
                    kernels::matmul_nt_acc(gy.data(), self.value(*b).data(), &mut ga, n, m, k);
                    self.accumulate(grads, *a, Tensor::new(&[n, k], ga)?);
                }
                if self.rg(*b) {
                    let mut gb = vec![T::zero(); k * m];
                    kernels::matmul_tn_acc(self.value(*a).data(), gy.data(), &mut gb, n, k, m);
                    self.accumulate(grads, *b, Tensor::new(&[k, m], gb)?);
                }
            }
            Op::MatMulNT(a, b) => {
                let (n, k) = dims2("matmul_nt", self.shape(*a))?;
                let m = self.value(*b).rows();
                if self.rg(*a) {
                    let mut ga = vec![T::zero(); n * k];
                    kernels::matmul_acc(gy.data(), self.value(*b).data(), &mut ga, n, m, k);
                    self.accumulate(grads, *a, Tensor::new(&[n, k], ga)?);
                }
                if self.rg(*b) {
                    let mut gb = vec![T::zero(); m * k];
                    kernels::matmul_tn_acc(gy.data(), self.value(*a).data(), &mut gb, n, m, k);
                    self.accumulate(grads, *b, Tensor::new(&[m, k], gb)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gy.clone());
                self.accumulate(grads, *b, gy.clone());
            }
            Op::Mul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                if self.rg(*a) {
                    let d = gy.data().iter().zip(vb.data()).map(|(&g, &y)| g * y).collect();
                    self.accumulate(grads, *a, Tensor::new(va.shape(), d)?);
                }
                if self.rg(*b) {
                    let d = gy.data().iter().zip(va.data()).map(|(&g, &x)| g * x).collect();
                    self.accumulate(grads, *b, Tensor::new(vb.shape(), d)?);
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, gy.clone());
                if self.rg(*row) {
                    let cols = gy.cols();
                    let mut acc = vec![T::zero(); cols];
                    for chunk in gy.data().chunks_exact(cols) {
                        for (s, &g) in acc.iter_mut().zip(chunk) {
                            *s += g;
                        }
                    }
                    let shape = self.shape(*row).to_vec();
                    self.accumulate(grads, *row, Tensor::new(&shape, acc)?);
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, gy.map(|g| g * c));
            }
            Op::AddConst(a) => self.accumulate(grads, *a, gy.clone()),
            Op::Gelu(a) => {
                let x = self.value(*a);
                let d = gy
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &x)| g * kernels::gelu_grad(x))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(x.shape(), d)?);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let cols = gy.cols();
                let rows = gy.rows();
                let g = self.value(*gain).data();
                if self.rg(*gain) || self.rg(*bias) {
                    let mut dg = vec![T::zero(); cols];
                    let mut db = vec![T::zero(); cols];
                    for r in 0..rows {
                        for j in 0..cols {
                            let dy = gy.data()[r * cols + j];
                            dg[j] += dy * xhat[r * cols + j];
                            db[j] += dy;
                        }
                    }
                    let gs = self.shape(*gain).to_vec();
                    let bs = self.shape(*bias).to_vec();
                    self.accumulate(grads, *gain, Tensor::new(&gs, dg)?);
                    self.accumulate(grads, *bias, Tensor::new(&bs, db)?);
                }
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); rows * cols];
                    let inv_n = T::of(1.0 / cols as f64);
                    for r in 0..rows {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..cols {
                            let dh = gy.data()[r * cols + j] * g[j];
                            s1 += dh;
                            s2 += dh * xhat[r * cols + j];
                        }
                        for j in 0..cols {
                            let dh = gy.data()[r * cols + j] * g[j];
                            dx[r * cols + j] = inv_std[r] * (dh - inv_n * s1 - xhat[r * cols + j] * inv_n * s2);
                        }
                    }
                    let xs = self.shape(*x).to_vec();
                    self.accumulate(grads, *x, Tensor::new(&xs, dx)?);
                }
            }
            Op::SoftmaxRows(a) => {
                let p = &node.value;
                let cols = p.cols();
                let mut dx = vec![T::zero(); p.numel()];
                for ((pr, gr), dr) in p
                    .data()
                    .chunks_exact(cols)
                    .zip(gy.data().chunks_exact(cols))
                    .zip(dx.chunks_exact_mut(cols))
                {
                    let s: T = pr.iter().zip(gr).map(|(&p, &g)| p * g).sum();
                    for ((d, &p), &g) in dr.iter_mut().zip(pr).zip(gr) {
                        *d = p * (g - s);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(p.shape(), dx)?);
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                let cols = y.cols();
                let mut dx = vec![T::zero(); y.numel()];
                for ((yr, gr), dr) in y
                    .data()
                    .chunks_exact(cols)
                    .zip(gy.data().chunks_exact(cols))
                    .zip(dx.chunks_exact_mut(cols))
                {
                    let s: T = gr.iter().copied().sum();
                    for ((d, &y), &g) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = g - y.exp() * s;
                    }
                }
                self.accumulate(grads, *a, Tensor::new(y.shape(), dx)?);
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = dims2("slice_cols", self.shape(*x))?;
                let len = gy.cols();
                let mut dx = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    dx[r * cols + start..r * cols + start + len].copy_from_slice(gy.row(r));
                }
                self.accumulate(grads, *x, Tensor::new(&[rows, cols], dx)?);
            }
            Op::ConcatCols(parts) => {
                let rows = gy.rows();
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&gy.row(r)[off..off + c]);
                        }
                        self.accumulate(grads, p, Tensor::new(&[rows, c], d)?);
                    }
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if self.rg(p) {
                        let shape = self.shape(p).to_vec();
                        self.accumulate(grads, p, Tensor::new(&shape, gy.data()[off..off + n].to_vec())?);
                    }
                    off += n;
                }
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                self.accumulate(grads, *x, gy.clone().reshape(&shape)?);
            }
            Op::DotConst(x, w) => {
                let g = gy.item();
                let shape = self.shape(*x).to_vec();
                self.accumulate(
                    grads,
                    *x,
                    Tensor::new(&shape, w.data().iter().map(|&v| v * g).collect())?,
                );
            }
            Op::SumAll(x) => {
                let shape = self.shape(*x).to_vec();
                self.accumulate(grads, *x, Tensor::full(&shape, gy.item()));
            }
        }
        Ok(())
    }
}

/// Parameter gradients from one backward pass, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    params: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id.index()).and_then(|g| g.as_ref())
    }

    pub fn into_vec(self) -> Vec<Option<Tensor<T>>> {
        self.params
    }

    /// Euclidean norm over every parameter gradient.
    pub fn global_norm(&self) -> f64 {
        self.params
            .iter()
            .flatten()
            .map(|g| g.sum_squares())
            .sum::<f64>()
            .sqrt()
    }
}
