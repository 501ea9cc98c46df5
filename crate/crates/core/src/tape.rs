//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation eagerly: the forward value is computed
//! when the node is pushed, and the inputs each backward rule needs are kept
//! on the tape. Nodes are appended in evaluation order, so the tape is always
//! topologically sorted and [`Tape::backward`] is a single reverse sweep.
//!
//! Every node also carries its cost under the FLOP convention documented in
//! `docs/flops.md`.

use crate::error::{Error, Result};
use crate::ops::{self, ConvSpec, PoolMode};
use crate::scalar::{self, Scalar};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    MatMul(Var, Var),
    MatVec(Var, Var),
    Transpose(Var),
    AddRowBias(Var, Var),
    SoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Concat(Vec<Var>),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    Row(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    Index(Var, usize),
    Conv1d { x: Var, w: Var, b: Var, spec: ConvSpec },
    RegionPool { x: Var, routes: ops::PoolRoutes<T> },
    CumSoftplus(Var),
    Pinball { pred: Var, target: T, taus: Vec<T> },
    Bce { p: Var, target: T },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    flops: u64,
}

/// Lower clamp applied to probabilities inside [`Tape::bce`].
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Total FLOPs of every node recorded so far.
    pub fn flops(&self) -> u64 {
        self.nodes.iter().map(|n| n.flops).sum()
    }

    /// FLOPs of nodes recorded after `mark` (a value of [`Tape::len`]).
    pub fn flops_since(&self, mark: usize) -> u64 {
        self.nodes[mark..].iter().map(|n| n.flops).sum()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            flops: 0,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var], flops: u64) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            flops,
        });
        Var(self.nodes.len() - 1)
    }

    fn v(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.v(a), self.v(b))?;
        let n = out.numel() as u64;
        Ok(self.push(out, Op::Add(a, b), &[a, b], n))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::sub(self.v(a), self.v(b))?;
        let n = out.numel() as u64;
        Ok(self.push(out, Op::Sub(a, b), &[a, b], n))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::mul(self.v(a), self.v(b))?;
        let n = out.numel() as u64;
        Ok(self.push(out, Op::Mul(a, b), &[a, b], n))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.v(a).map(|x| x * c);
        let n = out.numel() as u64;
        self.push(out, Op::Scale(a, c), &[a], n)
    }

    /// Adds a constant.
    pub fn add_const(&mut self, a: Var, c: T) -> Var {
        let out = self.v(a).map(|x| x + c);
        let n = out.numel() as u64;
        self.push(out, Op::AddConst(a), &[a], n)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = ops::sigmoid(self.v(a));
        let n = out.numel() as u64;
        self.push(out, Op::Sigmoid(a), &[a], n)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = ops::tanh(self.v(a));
        let n = out.numel() as u64;
        self.push(out, Op::Tanh(a), &[a], n)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = ops::softplus(self.v(a));
        let n = out.numel() as u64;
        self.push(out, Op::Softplus(a), &[a], n)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.v(a), self.v(b))?;
        let k = self.v(a).shape()[1] as u64;
        let flops = 2 * k * out.numel() as u64;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b], flops))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let out = ops::matvec(self.v(w), self.v(x))?;
        let flops = 2 * self.v(w).numel() as u64;
        Ok(self.push(out, Op::MatVec(w, x), &[w, x], flops))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = ops::transpose(self.v(a))?;
        Ok(self.push(out, Op::Transpose(a), &[a], 0))
    }

    pub fn add_row_bias(&mut self, m: Var, b: Var) -> Result<Var> {
        let out = ops::add_row_bias(self.v(m), self.v(b))?;
        let n = out.numel() as u64;
        Ok(self.push(out, Op::AddRowBias(m, b), &[m, b], n))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = ops::softmax_rows(self.v(a))?;
        let (m, n) = out.dims2("softmax_rows")?;
        let flops = (3 * m * n + 2 * m * n.saturating_sub(1)) as u64;
        Ok(self.push(out, Op::SoftmaxRows(a), &[a], flops))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = ops::sum(self.v(a));
        let flops = self.v(a).numel().saturating_sub(1) as u64;
        self.push(out, Op::Sum(a), &[a], flops)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let out = ops::mean(self.v(a));
        let flops = self.v(a).numel() as u64;
        self.push(out, Op::Mean(a), &[a], flops)
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let out = ops::mean_rows(self.v(a))?;
        let flops = self.v(a).numel() as u64;
        Ok(self.push(out, Op::MeanRows(a), &[a], flops))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = parts.iter().map(|&p| self.v(p)).collect();
        let out = ops::concat(&vals)?;
        Ok(self.push(out, Op::Concat(parts.to_vec()), parts, 0))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = parts.iter().map(|&p| self.v(p)).collect();
        let out = ops::concat_cols(&vals)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts, 0))
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = rows.iter().map(|&p| self.v(p)).collect();
        let out = ops::stack_rows(&vals)?;
        Ok(self.push(out, Op::StackRows(rows.to_vec()), rows, 0))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        let out = ops::row(self.v(a), r)?;
        Ok(self.push(out, Op::Row(a, r), &[a], 0))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = ops::slice_cols(self.v(a), start, end)?;
        Ok(self.push(out, Op::SliceCols(a, start), &[a], 0))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.v(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a], 0))
    }

    /// Element `i` of the flattened tensor, as shape `[1]`.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        let t = self.v(a);
        let v = *t.data().get(i).ok_or_else(|| {
            Error::InvalidInput(format!("index {i} out of range for {:?}", t.shape()))
        })?;
        Ok(self.push(Tensor::scalar(v), Op::Index(a, i), &[a], 0))
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var> {
        let out = ops::conv1d(self.v(x), self.v(w), self.v(b), spec)?;
        let shape = self.v(w).shape();
        let taps = (shape[1] * shape[2]) as u64;
        let positions = out.numel() as u64;
        let flops = 2 * taps * positions + positions;
        Ok(self.push(out, Op::Conv1d { x, w, b, spec }, &[x, w, b], flops))
    }

    pub fn region_pool(&mut self, x: Var, regions: usize, mode: PoolMode) -> Result<Var> {
        let (out, routes) = ops::region_pool(self.v(x), regions, mode)?;
        let len = self.v(x).shape()[1];
        let flops: u64 = ops::region_bounds(len, regions)
            .iter()
            .enumerate()
            .map(|(r, &(_, l))| match mode {
                _ if len < regions && r >= len => 0,
                PoolMode::Max => (l - 1) as u64,
                PoolMode::Avg => l as u64,
            })
            .sum::<u64>()
            * self.v(x).shape()[0] as u64;
        Ok(self.push(out, Op::RegionPool { x, routes }, &[x], flops))
    }

    pub fn cum_softplus(&mut self, a: Var) -> Result<Var> {
        let out = ops::cum_softplus(self.v(a))?;
        let width = *out.shape().last().unwrap();
        let rows = (out.numel() / width) as u64;
        let flops = 3 * rows * (width as u64 - 1);
        Ok(self.push(out, Op::CumSoftplus(a), &[a], flops))
    }

    /// Mean pinball loss `Σ_k ρ_{τ_k}(y − ŷ_k) / K` with
    /// `ρ_τ(e) = max(τe, (τ−1)e)`.
    pub fn pinball(&mut self, pred: Var, target: T, taus: &[T]) -> Result<Var> {
        let p = self.v(pred);
        if p.shape() != [taus.len()] {
            return Err(Error::shape("pinball", p.shape(), &[taus.len()]));
        }
        let k = T::lit(taus.len() as f64);
        let total = p.data().iter().zip(taus).fold(T::zero(), |acc, (&yh, &tau)| {
            let e = target - yh;
            acc + (tau * e).max((tau - T::one()) * e)
        });
        let flops = 4 * taus.len() as u64;
        Ok(self.push(
            Tensor::scalar(total / k),
            Op::Pinball {
                pred,
                target,
                taus: taus.to_vec(),
            },
            &[pred],
            flops,
        ))
    }

    /// Binary cross-entropy of a probability of shape `[1]`, clamped to
    /// `[PROB_EPS, 1 − PROB_EPS]`.
    pub fn bce(&mut self, p: Var, target: T) -> Result<Var> {
        let pv = self.v(p);
        if !pv.is_scalar() {
            return Err(Error::shape("bce", pv.shape(), &[1]));
        }
        let eps = T::lit(PROB_EPS);
        let pc = pv.data()[0].max(eps).min(T::one() - eps);
        let loss = -(target * pc.ln() + (T::one() - target) * (T::one() - pc).ln());
        Ok(self.push(Tensor::scalar(loss), Op::Bce { p, target }, &[p], 6))
    }

    /// Reverse sweep from a scalar `loss`. Gradients exist for every
    /// gradient-tracking node reachable from it.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.v(loss).shape();
        if shape != [1] {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss of shape [1], got {shape:?}"
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    /// Gradient for an operand of a broadcasting binary op: summed when the
    /// operand is `[1]` and the output is larger.
    fn reduce_to(&self, v: Var, g: Tensor<T>) -> Tensor<T> {
        if self.v(v).is_scalar() && g.numel() != 1 {
            ops::sum(&g)
        } else {
            g
        }
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                self.accumulate(grads, a, self.reduce_to(a, g.clone()));
                self.accumulate(grads, b, self.reduce_to(b, g.clone()));
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, self.reduce_to(a, g.clone()));
                self.accumulate(grads, b, self.reduce_to(b, g.map(|x| -x)));
            }
            &Op::Mul(a, b) => {
                let ga = ops::mul(g, self.v(b))?;
                let gb = ops::mul(g, self.v(a))?;
                self.accumulate(grads, a, self.reduce_to(a, ga));
                self.accumulate(grads, b, self.reduce_to(b, gb));
            }
            &Op::Scale(a, c) => self.accumulate(grads, a, g.map(|x| x * c)),
            &Op::AddConst(a) => self.accumulate(grads, a, g.clone()),
            &Op::Sigmoid(a) => {
                let d = ops::zip_with("sigmoid'", g, out, |gi, s| gi * s * (T::one() - s))?;
                self.accumulate(grads, a, d);
            }
            &Op::Tanh(a) => {
                let d = ops::zip_with("tanh'", g, out, |gi, t| gi * (T::one() - t * t))?;
                self.accumulate(grads, a, d);
            }
            &Op::Softplus(a) => {
                let d = ops::zip_with("softplus'", g, self.v(a), |gi, x| gi * scalar::sigmoid(x))?;
                self.accumulate(grads, a, d);
            }
            &Op::MatMul(a, b) => {
                let bt = ops::transpose(self.v(b))?;
                let at = ops::transpose(self.v(a))?;
                self.accumulate(grads, a, ops::matmul(g, &bt)?);
                self.accumulate(grads, b, ops::matmul(&at, g)?);
            }
            &Op::MatVec(w, x) => {
                let (m, n) = self.v(w).dims2("matvec")?;
                let xd = self.v(x).data();
                let mut gw = Vec::with_capacity(m * n);
                for r in 0..m {
                    gw.extend(xd.iter().map(|&xv| g.data()[r] * xv));
                }
                self.accumulate(grads, w, Tensor::matrix(m, n, gw)?);
                let wt = ops::transpose(self.v(w))?;
                self.accumulate(grads, x, ops::matvec(&wt, g)?);
            }
            &Op::Transpose(a) => self.accumulate(grads, a, ops::transpose(g)?),
            &Op::AddRowBias(m, b) => {
                self.accumulate(grads, m, g.clone());
                let (r, n) = g.dims2("add_row_bias")?;
                let gb = (0..n)
                    .map(|j| (0..r).fold(T::zero(), |acc, i| acc + g.get2(i, j)))
                    .collect();
                self.accumulate(grads, b, Tensor::vector(gb));
            }
            &Op::SoftmaxRows(a) => {
                let (m, n) = out.dims2("softmax_rows")?;
                let mut d = Vec::with_capacity(m * n);
                for r in 0..m {
                    let (s, gr) = (out.row(r), g.row(r));
                    let dot = s.iter().zip(gr).fold(T::zero(), |acc, (&si, &gi)| acc + si * gi);
                    d.extend(s.iter().zip(gr).map(|(&si, &gi)| si * (gi - dot)));
                }
                self.accumulate(grads, a, Tensor::matrix(m, n, d)?);
            }
            &Op::Sum(a) => {
                self.accumulate(grads, a, Tensor::full(self.v(a).shape(), g.data()[0]));
            }
            &Op::Mean(a) => {
                let n = T::lit(self.v(a).numel() as f64);
                self.accumulate(grads, a, Tensor::full(self.v(a).shape(), g.data()[0] / n));
            }
            &Op::MeanRows(a) => {
                let (r, n) = self.v(a).dims2("mean_rows")?;
                let inv = T::one() / T::lit(r as f64);
                let d = (0..r * n).map(|k| g.data()[k % n] * inv).collect();
                self.accumulate(grads, a, Tensor::matrix(r, n, d)?);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.v(p).numel();
                    let piece = g.data()[offset..offset + len].to_vec();
                    self.accumulate(grads, p, Tensor::vector(piece));
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.v(p).shape()[1];
                    self.accumulate(grads, p, ops::slice_cols(g, offset, offset + cols)?);
                    offset += cols;
                }
            }
            Op::StackRows(rows) => {
                for (r, &p) in rows.iter().enumerate() {
                    self.accumulate(grads, p, Tensor::vector(g.row(r).to_vec()));
                }
            }
            &Op::Row(a, r) => {
                let mut d = Tensor::zeros(self.v(a).shape());
                let n = g.numel();
                d.data_mut()[r * n..(r + 1) * n].copy_from_slice(g.data());
                self.accumulate(grads, a, d);
            }
            &Op::SliceCols(a, start) => {
                let mut d = Tensor::zeros(self.v(a).shape());
                let n = self.v(a).shape()[1];
                let (m, w) = g.dims2("slice_cols")?;
                for r in 0..m {
                    d.data_mut()[r * n + start..r * n + start + w].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, a, d);
            }
            &Op::Reshape(a) => self.accumulate(grads, a, g.reshape(self.v(a).shape())?),
            &Op::Index(a, k) => {
                let mut d = Tensor::zeros(self.v(a).shape());
                d.data_mut()[k] = g.data()[0];
                self.accumulate(grads, a, d);
            }
            &Op::Conv1d { x, w, b, spec } => self.conv1d_backward(x, w, b, spec, g, grads),
            Op::RegionPool { x, routes } => {
                let mut d = Tensor::zeros(self.v(*x).shape());
                for (o, route) in routes.iter().enumerate() {
                    for &(idx, wt) in route {
                        d.data_mut()[idx] = d.data()[idx] + g.data()[o] * wt;
                    }
                }
                self.accumulate(grads, *x, d);
            }
            &Op::CumSoftplus(a) => {
                let av = self.v(a);
                let width = *av.shape().last().unwrap();
                let mut d = Vec::with_capacity(av.numel());
                for (row, grow) in av.data().chunks(width).zip(g.data().chunks(width)) {
                    // suffix[k] = Σ_{j ≥ k} g_j
                    let mut suffix = vec![T::zero(); width + 1];
                    for k in (0..width).rev() {
                        suffix[k] = suffix[k + 1] + grow[k];
                    }
                    let slope = |k: usize| scalar::sigmoid(row[k] - row[k - 1]);
                    for k in 0..width {
                        let own = if k == 0 { suffix[0] } else { suffix[k] * slope(k) };
                        let next = if k + 1 < width {
                            suffix[k + 1] * slope(k + 1)
                        } else {
                            T::zero()
                        };
                        d.push(own - next);
                    }
                }
                self.accumulate(grads, a, Tensor::new(av.shape().to_vec(), d)?);
            }
            Op::Pinball { pred, target, taus } => {
                let k = T::lit(taus.len() as f64);
                let scale = g.data()[0] / k;
                let d = self
                    .v(*pred)
                    .data()
                    .iter()
                    .zip(taus)
                    .map(|(&yh, &tau)| {
                        let e = *target - yh;
                        let de = if e > T::zero() {
                            -tau
                        } else if e < T::zero() {
                            T::one() - tau
                        } else {
                            T::zero()
                        };
                        de * scale
                    })
                    .collect();
                self.accumulate(grads, *pred, Tensor::vector(d));
            }
            &Op::Bce { p, target } => {
                let pv = self.v(p).data()[0];
                let eps = T::lit(PROB_EPS);
                let d = if pv < eps || pv > T::one() - eps {
                    T::zero()
                } else {
                    -target / pv + (T::one() - target) / (T::one() - pv)
                };
                self.accumulate(grads, p, Tensor::scalar(d * g.data()[0]));
            }
        }
        Ok(())
    }

    fn conv1d_backward(
        &self,
        x: Var,
        w: Var,
        b: Var,
        spec: ConvSpec,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let (xv, wv) = (self.v(x), self.v(w));
        let (c_in, len) = (xv.shape()[0], xv.shape()[1]);
        let (c_out, k) = (wv.shape()[0], wv.shape()[2]);
        let l_out = g.shape()[1];
        let mut gx = Tensor::zeros(xv.shape());
        let mut gw = Tensor::zeros(wv.shape());
        let mut gb = Tensor::zeros(&[c_out]);
        for c in 0..c_out {
            for t in 0..l_out {
                let go = g.data()[c * l_out + t];
                gb.data_mut()[c] = gb.data()[c] + go;
                for i in 0..c_in {
                    for j in 0..k {
                        let pos = t * spec.stride + j * spec.dilation;
                        if pos < spec.pad_left {
                            continue;
                        }
                        let xi = i * len + pos - spec.pad_left;
                        let wi = (c * c_in + i) * k + j;
                        gw.data_mut()[wi] = gw.data()[wi] + go * xv.data()[xi];
                        gx.data_mut()[xi] = gx.data()[xi] + go * wv.data()[wi];
                    }
                }
            }
        }
        self.accumulate(grads, x, gx);
        self.accumulate(grads, w, gw);
        self.accumulate(grads, b, gb);
    }
}
