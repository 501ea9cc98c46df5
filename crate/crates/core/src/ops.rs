//! Pure forward kernels. The tape records these and adds backward rules on top;
//! they are also usable directly for inference without a tape.
//!
//! Every reduction runs left to right in index order.

use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};
use crate::tensor::Tensor;

/// Binary elementwise op. Shapes must agree, except that a `[1]` operand
/// broadcasts against any shape.
pub fn zip_with<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data)
    } else if b.is_scalar() {
        let y = b.data()[0];
        Ok(a.map(|x| f(x, y)))
    } else if a.is_scalar() {
        let x = a.data()[0];
        Ok(b.map(|y| f(x, y)))
    } else {
        Err(Error::shape(op, a.shape(), b.shape()))
    }
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("sub", a, b, |x, y| x - y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("mul", a, b, |x, y| x * y)
}

pub fn sigmoid<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(scalar::sigmoid)
}

pub fn tanh<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(T::tanh)
}

pub fn softplus<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(scalar::softplus)
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero();
            for p in 0..k {
                acc = acc + ad[i * k + p] * bd[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::matrix(m, n, out)
}

/// `W · x` for `W: [m×n]`, `x: [n]`.
pub fn matvec<T: Scalar>(w: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = w.dims2("matvec")?;
    if x.shape() != [n] {
        return Err(Error::shape("matvec", w.shape(), x.shape()));
    }
    let out = (0..m)
        .map(|i| {
            w.row(i)
                .iter()
                .zip(x.data())
                .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
        })
        .collect();
    Ok(Tensor::vector(out))
}

pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = a.dims2("transpose")?;
    let mut out = Vec::with_capacity(m * n);
    for j in 0..n {
        for i in 0..m {
            out.push(a.get2(i, j));
        }
    }
    Tensor::matrix(n, m, out)
}

/// Adds `b: [n]` to every row of `m: [r×n]`.
pub fn add_row_bias<T: Scalar>(m: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, n) = m.dims2("add_row_bias")?;
    if b.shape() != [n] {
        return Err(Error::shape("add_row_bias", m.shape(), b.shape()));
    }
    let mut out = m.data().to_vec();
    for i in 0..r {
        for j in 0..n {
            out[i * n + j] = out[i * n + j] + b.data()[j];
        }
    }
    Tensor::matrix(r, n, out)
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = x.dims2("softmax_rows")?;
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let row = x.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let total = exps.iter().fold(T::zero(), |acc, &e| acc + e);
        out.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor::matrix(m, n, out)
}

pub fn sum<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(a.data().iter().fold(T::zero(), |acc, &v| acc + v))
}

pub fn mean<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let n = T::lit(a.numel() as f64);
    Tensor::scalar(a.data().iter().fold(T::zero(), |acc, &v| acc + v) / n)
}

/// Column means of `[r×n]`, giving `[n]`.
pub fn mean_rows<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, n) = a.dims2("mean_rows")?;
    if r == 0 {
        return Err(Error::EmptySequence);
    }
    let inv = T::one() / T::lit(r as f64);
    let out = (0..n)
        .map(|j| (0..r).fold(T::zero(), |acc, i| acc + a.get2(i, j)) * inv)
        .collect();
    Ok(Tensor::vector(out))
}

/// Concatenates rank-1 tensors.
pub fn concat<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let mut out = Vec::new();
    for p in parts {
        if p.rank() != 1 {
            return Err(Error::InvalidShape {
                shape: p.shape().to_vec(),
                reason: "concat expects vectors".into(),
            });
        }
        out.extend_from_slice(p.data());
    }
    Ok(Tensor::vector(out))
}

/// Concatenates matrices with equal row counts along the column axis.
pub fn concat_cols<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidInput("concat_cols of nothing".into()))?;
    let (r, _) = first.dims2("concat_cols")?;
    let mut total = 0;
    for p in parts {
        let (pr, pc) = p.dims2("concat_cols")?;
        if pr != r {
            return Err(Error::shape("concat_cols", first.shape(), p.shape()));
        }
        total += pc;
    }
    let mut out = Vec::with_capacity(r * total);
    for i in 0..r {
        for p in parts {
            out.extend_from_slice(p.row(i));
        }
    }
    Tensor::matrix(r, total, out)
}

/// Stacks equally long vectors as the rows of a matrix.
pub fn stack_rows<T: Scalar>(rows: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = rows.first().ok_or(Error::EmptySequence)?;
    for r in rows {
        if r.rank() != 1 || r.shape() != first.shape() {
            return Err(Error::shape("stack_rows", first.shape(), r.shape()));
        }
    }
    let n = first.numel();
    let data = rows.iter().flat_map(|r| r.data().iter().copied()).collect();
    Tensor::matrix(rows.len(), n, data)
}

pub fn row<T: Scalar>(a: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (m, _) = a.dims2("row")?;
    if r >= m {
        return Err(Error::InvalidInput(format!("row {r} out of range for {m} rows")));
    }
    Ok(Tensor::vector(a.row(r).to_vec()))
}

/// Columns `start..end` of a matrix.
pub fn slice_cols<T: Scalar>(a: &Tensor<T>, start: usize, end: usize) -> Result<Tensor<T>> {
    let (m, n) = a.dims2("slice_cols")?;
    if start >= end || end > n {
        return Err(Error::InvalidInput(format!(
            "column range {start}..{end} invalid for {n} columns"
        )));
    }
    let mut out = Vec::with_capacity(m * (end - start));
    for i in 0..m {
        out.extend_from_slice(&a.row(i)[start..end]);
    }
    Tensor::matrix(m, end - start, out)
}

/// Geometry of a 1-D convolution: `pad_left` zeros are prepended to the
/// time axis and taps are spaced `dilation` apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            stride: 1,
            dilation: 1,
            pad_left: 0,
        }
    }
}

impl ConvSpec {
    pub fn receptive_field(&self, kernel: usize) -> usize {
        self.dilation * (kernel - 1) + 1
    }

    /// Output length for an input of length `len`, or the too-short error.
    pub fn output_len(&self, len: usize, kernel: usize) -> Result<usize> {
        let field = self.receptive_field(kernel);
        let padded = len + self.pad_left;
        if padded < field {
            return Err(Error::SequenceTooShort {
                len,
                kernel: field.saturating_sub(self.pad_left),
            });
        }
        Ok((padded - field) / self.stride + 1)
    }
}

/// `out[c,t] = b[c] + Σ_{i,j} w[c,i,j] · x̃[i, t·stride + j·dilation]`, where `x̃`
/// is `x: [C_in×L]` left-padded with zeros.
pub fn conv1d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let (c_in, len) = x.dims2("conv1d")?;
    let (c_out, wc_in, k) = match w.shape()[..] {
        [o, i, k] => (o, i, k),
        _ => return Err(Error::shape("conv1d", x.shape(), w.shape())),
    };
    if wc_in != c_in || k == 0 {
        return Err(Error::shape("conv1d", x.shape(), w.shape()));
    }
    if b.shape() != [c_out] {
        return Err(Error::shape("conv1d", w.shape(), b.shape()));
    }
    let l_out = spec.output_len(len, k)?;
    let (xd, wd) = (x.data(), w.data());
    let mut out = Vec::with_capacity(c_out * l_out);
    for c in 0..c_out {
        for t in 0..l_out {
            let mut acc = b.data()[c];
            for i in 0..c_in {
                for j in 0..k {
                    let pos = t * spec.stride + j * spec.dilation;
                    if pos >= spec.pad_left {
                        let xi = pos - spec.pad_left;
                        acc = acc + wd[(c * c_in + i) * k + j] * xd[i * len + xi];
                    }
                }
            }
            out.push(acc);
        }
    }
    Tensor::matrix(c_out, l_out, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Max,
    Avg,
}

/// Contiguous regions `(start, len)` splitting `len` positions into `regions`
/// parts; the first `len % regions` parts are one longer. When `len < regions`
/// the trailing parts repeat the last position.
pub fn region_bounds(len: usize, regions: usize) -> Vec<(usize, usize)> {
    assert!(regions >= 1 && len >= 1);
    if len < regions {
        return (0..regions).map(|r| (r.min(len - 1), 1)).collect();
    }
    let base = len / regions;
    let extra = len % regions;
    let mut start = 0;
    (0..regions)
        .map(|r| {
            let l = base + usize::from(r < extra);
            let span = (start, l);
            start += l;
            span
        })
        .collect()
}

/// Per-output list of `(flat input index, weight)` contributions.
pub type PoolRoutes<T> = Vec<Vec<(usize, T)>>;

/// Quick region pooling of `fmap: [C×L]` into `[C·R]`, channel-major
/// (`out[c·R + r]`). Max ties go to the earliest position.
pub fn region_pool<T: Scalar>(
    fmap: &Tensor<T>,
    regions: usize,
    mode: PoolMode,
) -> Result<(Tensor<T>, PoolRoutes<T>)> {
    let (c, len) = fmap.dims2("region_pool")?;
    if regions == 0 {
        return Err(Error::Config("region count must be positive".into()));
    }
    if len == 0 {
        return Err(Error::EmptySequence);
    }
    let bounds = region_bounds(len, regions);
    let mut out = Vec::with_capacity(c * regions);
    let mut routes = Vec::with_capacity(c * regions);
    for ch in 0..c {
        let row = fmap.row(ch);
        for &(start, l) in &bounds {
            match mode {
                PoolMode::Max => {
                    let mut best = start;
                    for p in start + 1..start + l {
                        if row[p] > row[best] {
                            best = p;
                        }
                    }
                    out.push(row[best]);
                    routes.push(vec![(ch * len + best, T::one())]);
                }
                PoolMode::Avg => {
                    let w = T::one() / T::lit(l as f64);
                    let total = row[start..start + l].iter().fold(T::zero(), |a, &v| a + v);
                    out.push(total * w);
                    routes.push((start..start + l).map(|p| (ch * len + p, w)).collect());
                }
            }
        }
    }
    Ok((Tensor::vector(out), routes))
}

/// Non-decreasing rectification applied per row (or to a vector):
/// `y₀ = a₀`, `y_k = y_{k−1} + softplus(a_k − a_{k−1})`.
pub fn cum_softplus<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let width = *a.shape().last().expect("rank >= 1");
    if a.rank() > 2 || width == 0 {
        return Err(Error::InvalidShape {
            shape: a.shape().to_vec(),
            reason: "cum_softplus expects a vector or matrix".into(),
        });
    }
    let mut out = Vec::with_capacity(a.numel());
    for row in a.data().chunks(width) {
        let mut acc = row[0];
        out.push(acc);
        for k in 1..width {
            acc = acc + scalar::softplus(row[k] - row[k - 1]);
            out.push(acc);
        }
    }
    Tensor::new(a.shape().to_vec(), out)
}
