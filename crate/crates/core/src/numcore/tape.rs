//! Reverse-mode automatic differentiation over a linear tape of rank-2
//! tensor operations.
//!
//! A [`Tape`] is built by one forward pass and consumed by [`Tape::backward`].
//! Parameters enter through [`Tape::param`] and are reported back by id in
//! [`ParamGrads`], so the caller decides which store receives them.
//! Constants and [`Tape::stop_grad`] outputs are leaves that never receive
//! gradient, which is how the stop-gradient barrier is realised.

use std::collections::BTreeMap;

use super::param::{ParamId, ParamStore};
use super::tensor::{matmul_raw, transpose_raw};
use super::{NumError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Gelu(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Softmax(Var),
    CausalMask(Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    SmoothL1 { pred: Var, target: Var, beta: f64 },
    L1 { pred: Var, target: Var },
    CrossEntropy { logits: Var, targets: Vec<usize> },
    BceWithLogits { logits: Var, targets: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a backward pass, keyed by parameter id. Repeated bindings of
/// one parameter are summed.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads {
    grads: BTreeMap<ParamId, Tensor>,
}

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// How a parameter store is bound into a forward pass.
#[derive(Clone, Copy)]
pub enum Bind<'a> {
    /// Parameters become gradient-tracked leaves.
    Trainable(&'a ParamStore),
    /// Parameters become constants; nothing flows back to them.
    Frozen(&'a ParamStore),
}

impl<'a> Bind<'a> {
    pub fn var(&self, tape: &mut Tape, id: ParamId) -> Var {
        match self {
            Bind::Trainable(s) => tape.param(s, id),
            Bind::Frozen(s) => tape.constant(s.value(id).clone()),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        match self {
            Bind::Trainable(s) | Bind::Frozen(s) => s,
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NumError {
    NumError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn erf(x: f64) -> f64 {
    libm::erf(x)
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x * INV_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + erf(x * INV_SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(vec![rows, cols], data).expect("internal shape")
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A gradient-tracked leaf holding a copy of parameter `id`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let tracked = p.requires_grad;
        self.push(p.value.clone(), Op::Param(id), tracked)
    }

    /// Copies `x` into a constant leaf: the stop-gradient barrier.
    pub fn stop_grad(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.constant(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        if bv.rows() != k {
            return Err(mismatch("matmul", av, bv));
        }
        let out = mat(m, n, matmul_raw(av.data(), bv.data(), m, k, n));
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        let out = mat(n, m, transpose_raw(av.data(), m, n));
        let ng = self.ng(&[a]);
        self.push(out, Op::Transpose(a), ng)
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, NumError> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(mismatch(name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(mat(av.rows(), av.cols(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let av = self.value(a);
        let out = mat(av.rows(), av.cols(), av.data().iter().map(|v| v * c).collect());
        let ng = self.ng(&[a]);
        self.push(out, Op::Scale(a, c), ng)
    }

    fn row_broadcast(
        &mut self,
        x: Var,
        r: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, NumError> {
        let (xv, rv) = (self.value(x), self.value(r));
        if rv.numel() != xv.cols() {
            return Err(mismatch(name, xv, rv));
        }
        let c = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, rv.data()[i % c]))
            .collect();
        Ok(mat(xv.rows(), c, data))
    }

    /// Adds a `1 x n` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var, NumError> {
        let out = self.row_broadcast(x, r, "add_row", |a, b| a + b)?;
        let ng = self.ng(&[x, r]);
        Ok(self.push(out, Op::AddRow(x, r), ng))
    }

    /// Multiplies every row of `x` elementwise by a `1 x n` row.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var, NumError> {
        let out = self.row_broadcast(x, r, "mul_row", |a, b| a * b)?;
        let ng = self.ng(&[x, r]);
        Ok(self.push(out, Op::MulRow(x, r), ng))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = mat(
            xv.rows(),
            xv.cols(),
            xv.data().iter().map(|&v| gelu_scalar(v)).collect(),
        );
        let ng = self.ng(&[x]);
        self.push(out, Op::Gelu(x), ng)
    }

    /// Non-affine layer normalisation over the last axis.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (m, n) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; m * n];
        let mut inv_std = Vec::with_capacity(m);
        for r in 0..m {
            let row = xv.row_slice(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, v) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let ng = self.ng(&[x]);
        self.push(mat(m, n, out), Op::LayerNorm { x, inv_std }, ng)
    }

    /// Row-wise softmax. Entries equal to `-inf` get exactly zero weight.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (m, n) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = xv.row_slice(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[r * n..(r + 1) * n];
            let mut sum = 0.0;
            for (oi, &v) in o.iter_mut().zip(row) {
                *oi = (v - max).exp();
                sum += *oi;
            }
            for oi in o.iter_mut() {
                *oi /= sum;
            }
        }
        let ng = self.ng(&[x]);
        self.push(mat(m, n, out), Op::Softmax(x), ng)
    }

    /// Sets entries above the diagonal of a square score matrix to `-inf`.
    pub fn causal_mask(&mut self, x: Var) -> Result<Var, NumError> {
        let xv = self.value(x);
        let (m, n) = (xv.rows(), xv.cols());
        if m != n {
            return Err(NumError::ShapeMismatch {
                op: "causal_mask",
                left: vec![m, n],
                right: vec![m, m],
            });
        }
        let mut data = xv.data().to_vec();
        for i in 0..m {
            for v in &mut data[i * n + i + 1..(i + 1) * n] {
                *v = f64::NEG_INFINITY;
            }
        }
        let ng = self.ng(&[x]);
        Ok(self.push(mat(m, n, data), Op::CausalMask(x), ng))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, NumError> {
        let xv = self.value(x);
        let (m, n) = (xv.rows(), xv.cols());
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(NumError::IndexOutOfRange { index: i, len: m });
            }
            data.extend_from_slice(xv.row_slice(i));
        }
        let ng = self.ng(&[x]);
        Ok(self.push(mat(idx.len(), n, data), Op::GatherRows(x, idx.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let n = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != n {
                return Err(mismatch("concat_rows", self.value(parts[0]), pv));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let ng = self.ng(parts);
        Ok(self.push(mat(rows, n, data), Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NumError> {
        let xv = self.value(x);
        let (m, n) = (xv.rows(), xv.cols());
        if start >= end || end > n {
            return Err(NumError::IndexOutOfRange { index: end, len: n });
        }
        let mut data = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            data.extend_from_slice(&xv.row_slice(r)[start..end]);
        }
        let ng = self.ng(&[x]);
        Ok(self.push(mat(m, end - start, data), Op::SliceCols(x, start, end), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let m = self.value(parts[0]).rows();
        let mut n = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != m {
                return Err(mismatch("concat_cols", self.value(parts[0]), pv));
            }
            n += pv.cols();
        }
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let ng = self.ng(parts);
        Ok(self.push(mat(m, n, data), Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Mean over rows, giving a `1 x n` row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (m, n) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, v) in out.iter_mut().zip(xv.row_slice(r)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        let ng = self.ng(&[x]);
        self.push(mat(1, n, out), Op::MeanRows(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().sum::<f64>() / xv.numel() as f64;
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// Elementwise Smooth-L1 averaged over all elements.
    pub fn smooth_l1(&mut self, pred: Var, target: Var, beta: f64) -> Result<Var, NumError> {
        let (pv, tv) = (self.value(pred), self.value(target));
        if !pv.same_shape(tv) {
            return Err(mismatch("smooth_l1", pv, tv));
        }
        if beta <= 0.0 || beta.is_nan() {
            return Err(NumError::InvalidArgument(format!(
                "smooth_l1 beta must be > 0, got {beta}"
            )));
        }
        let total: f64 = pv
            .data()
            .iter()
            .zip(tv.data())
            .map(|(p, t)| smooth_l1_scalar(p - t, beta))
            .sum();
        let out = Tensor::scalar(total / pv.numel() as f64);
        let ng = self.ng(&[pred, target]);
        Ok(self.push(out, Op::SmoothL1 { pred, target, beta }, ng))
    }

    /// Mean absolute error.
    pub fn l1(&mut self, pred: Var, target: Var) -> Result<Var, NumError> {
        let (pv, tv) = (self.value(pred), self.value(target));
        if !pv.same_shape(tv) {
            return Err(mismatch("l1", pv, tv));
        }
        let total: f64 = pv.data().iter().zip(tv.data()).map(|(p, t)| (p - t).abs()).sum();
        let out = Tensor::scalar(total / pv.numel() as f64);
        let ng = self.ng(&[pred, target]);
        Ok(self.push(out, Op::L1 { pred, target }, ng))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NumError> {
        let lv = self.value(logits);
        let (m, n) = (lv.rows(), lv.cols());
        if targets.len() != m {
            return Err(NumError::InvalidArgument(format!(
                "cross_entropy: {} targets for {m} rows",
                targets.len()
            )));
        }
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= n {
                return Err(NumError::IndexOutOfRange { index: t, len: n });
            }
            let row = lv.row_slice(r);
            total += log_sum_exp(row) - row[t];
        }
        let out = Tensor::scalar(total / m as f64);
        let ng = self.ng(&[logits]);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            ng,
        ))
    }

    /// Numerically stable binary cross-entropy on logits, averaged.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var, NumError> {
        let lv = self.value(logits);
        if targets.len() != lv.numel() {
            return Err(NumError::InvalidArgument(format!(
                "bce_with_logits: {} targets for {} logits",
                targets.len(),
                lv.numel()
            )));
        }
        let total: f64 = lv
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum();
        let out = Tensor::scalar(total / lv.numel() as f64);
        let ng = self.ng(&[logits]);
        Ok(self.push(
            out,
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            ng,
        ))
    }

    /// Back-propagates from a scalar `loss`, returning parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads, NumError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(NumError::NotScalar(lv.shape().to_vec()));
        }
        if !self.nodes[loss.0].needs_grad {
            return Err(NumError::NotTracked);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = ParamGrads::default();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => match out.grads.get_mut(id) {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(&g) {
                            *a += v;
                        }
                    }
                    None => {
                        let t = Tensor::new(y.shape().to_vec(), g).expect("grad shape");
                        out.grads.insert(*id, t);
                    }
                },
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    if self.requires_grad(*a) {
                        let bt = transpose_raw(bv.data(), k, n);
                        accum(&mut grads, *a, &matmul_raw(&g, &bt, m, n, k));
                    }
                    if self.requires_grad(*b) {
                        let at = transpose_raw(av.data(), m, k);
                        accum(&mut grads, *b, &matmul_raw(&at, &g, k, m, n));
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = (y.rows(), y.cols());
                    accum(&mut grads, *a, &transpose_raw(&g, m, n));
                }
                Op::Add(a, b) => {
                    accum(&mut grads, *a, &g);
                    accum(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    accum(&mut grads, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accum(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga: Vec<f64> = g.iter().zip(bv.data()).map(|(g, b)| g * b).collect();
                    let gb: Vec<f64> = g.iter().zip(av.data()).map(|(g, a)| g * a).collect();
                    accum(&mut grads, *a, &ga);
                    accum(&mut grads, *b, &gb);
                }
                Op::Scale(a, c) => {
                    let ga: Vec<f64> = g.iter().map(|v| v * c).collect();
                    accum(&mut grads, *a, &ga);
                }
                Op::AddRow(x, r) => {
                    accum(&mut grads, *x, &g);
                    if self.requires_grad(*r) {
                        accum(&mut grads, *r, &col_sums(&g, y.cols()));
                    }
                }
                Op::MulRow(x, r) => {
                    let (xv, rv) = (self.value(*x), self.value(*r));
                    let n = y.cols();
                    if self.requires_grad(*x) {
                        let gx: Vec<f64> = g.iter().enumerate().map(|(i, g)| g * rv.data()[i % n]).collect();
                        accum(&mut grads, *x, &gx);
                    }
                    if self.requires_grad(*r) {
                        let prod: Vec<f64> = g.iter().zip(xv.data()).map(|(g, x)| g * x).collect();
                        accum(&mut grads, *r, &col_sums(&prod, n));
                    }
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let gx: Vec<f64> = g.iter().zip(xv.data()).map(|(g, &x)| g * gelu_grad(x)).collect();
                    accum(&mut grads, *x, &gx);
                }
                Op::LayerNorm { x, inv_std } => {
                    let n = y.cols();
                    let mut gx = vec![0.0; g.len()];
                    for (r, inv) in inv_std.iter().enumerate() {
                        let gr = &g[r * n..(r + 1) * n];
                        let yr = y.row_slice(r);
                        let sum_g: f64 = gr.iter().sum();
                        let sum_gy: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            gx[r * n + j] = inv / n as f64 * (n as f64 * gr[j] - sum_g - yr[j] * sum_gy);
                        }
                    }
                    accum(&mut grads, *x, &gx);
                }
                Op::Softmax(x) => {
                    let n = y.cols();
                    let mut gx = vec![0.0; g.len()];
                    for r in 0..y.rows() {
                        let gr = &g[r * n..(r + 1) * n];
                        let yr = y.row_slice(r);
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            gx[r * n + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accum(&mut grads, *x, &gx);
                }
                Op::CausalMask(x) => {
                    let n = y.cols();
                    let mut gx = g;
                    for i in 0..n {
                        for v in &mut gx[i * n + i + 1..(i + 1) * n] {
                            *v = 0.0;
                        }
                    }
                    accum(&mut grads, *x, &gx);
                }
                Op::GatherRows(x, idx) => {
                    let xv = self.value(*x);
                    let n = xv.cols();
                    let mut gx = vec![0.0; xv.numel()];
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..n {
                            gx[i * n + j] += g[r * n + j];
                        }
                    }
                    accum(&mut grads, *x, &gx);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.value(*p).numel();
                        accum(&mut grads, *p, &g[off..off + len]);
                        off += len;
                    }
                }
                Op::SliceCols(x, start, end) => {
                    let xv = self.value(*x);
                    let (n, w) = (xv.cols(), end - start);
                    let mut gx = vec![0.0; xv.numel()];
                    for r in 0..xv.rows() {
                        gx[r * n + start..r * n + end].copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                    accum(&mut grads, *x, &gx);
                }
                Op::ConcatCols(parts) => {
                    let n = y.cols();
                    let mut off = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let w = pv.cols();
                        let mut gp = Vec::with_capacity(pv.numel());
                        for r in 0..pv.rows() {
                            gp.extend_from_slice(&g[r * n + off..r * n + off + w]);
                        }
                        accum(&mut grads, *p, &gp);
                        off += w;
                    }
                }
                Op::MeanRows(x) => {
                    let xv = self.value(*x);
                    let m = xv.rows() as f64;
                    let gx: Vec<f64> = (0..xv.numel()).map(|i| g[i % xv.cols()] / m).collect();
                    accum(&mut grads, *x, &gx);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).numel();
                    accum(&mut grads, *x, &vec![g[0]; n]);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).numel();
                    accum(&mut grads, *x, &vec![g[0] / n as f64; n]);
                }
                Op::SmoothL1 { pred, target, beta } => {
                    let (pv, tv) = (self.value(*pred), self.value(*target));
                    let scale = g[0] / pv.numel() as f64;
                    let gp: Vec<f64> = pv
                        .data()
                        .iter()
                        .zip(tv.data())
                        .map(|(p, t)| scale * smooth_l1_deriv(p - t, *beta))
                        .collect();
                    if self.requires_grad(*target) {
                        let gt: Vec<f64> = gp.iter().map(|v| -v).collect();
                        accum(&mut grads, *target, &gt);
                    }
                    accum(&mut grads, *pred, &gp);
                }
                Op::L1 { pred, target } => {
                    let (pv, tv) = (self.value(*pred), self.value(*target));
                    let scale = g[0] / pv.numel() as f64;
                    let gp: Vec<f64> = pv
                        .data()
                        .iter()
                        .zip(tv.data())
                        .map(|(p, t)| scale * sign(p - t))
                        .collect();
                    if self.requires_grad(*target) {
                        let gt: Vec<f64> = gp.iter().map(|v| -v).collect();
                        accum(&mut grads, *target, &gt);
                    }
                    accum(&mut grads, *pred, &gp);
                }
                Op::CrossEntropy { logits, targets } => {
                    let lv = self.value(*logits);
                    let n = lv.cols();
                    let scale = g[0] / targets.len() as f64;
                    let mut gl = vec![0.0; lv.numel()];
                    for (r, &t) in targets.iter().enumerate() {
                        let row = lv.row_slice(r);
                        let lse = log_sum_exp(row);
                        for j in 0..n {
                            let p = (row[j] - lse).exp();
                            gl[r * n + j] = scale * (p - if j == t { 1.0 } else { 0.0 });
                        }
                    }
                    accum(&mut grads, *logits, &gl);
                }
                Op::BceWithLogits { logits, targets } => {
                    let lv = self.value(*logits);
                    let scale = g[0] / targets.len() as f64;
                    let gl: Vec<f64> = lv
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&x, &t)| scale * (sigmoid(x) - t))
                        .collect();
                    accum(&mut grads, *logits, &gl);
                }
            }
        }
        Ok(out)
    }
}

fn accum(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(buf) => {
            for (b, x) in buf.iter_mut().zip(g) {
                *b += x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn col_sums(g: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (i, v) in g.iter().enumerate() {
        out[i % n] += v;
    }
    out
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn smooth_l1_scalar(d: f64, beta: f64) -> f64 {
    let a = d.abs();
    if a < beta {
        0.5 * d * d / beta
    } else {
        a - 0.5 * beta
    }
}

fn smooth_l1_deriv(d: f64, beta: f64) -> f64 {
    if d.abs() < beta {
        d / beta
    } else {
        sign(d)
    }
}
