//! Scaled dot-product attention between a query stream `X` and a memory
//! stream `Y`: `softmax((X W_Q)(Y W_K)ᵀ / √d_k) · Y W_V`.

use crate::error::{Error, Result};
use crate::param::{Bound, Init, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct Attention {
    pub w_query: ParamId,
    pub w_key: ParamId,
    pub w_value: ParamId,
    pub query_dim: usize,
    pub memory_dim: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub heads: usize,
}

/// `values: [T_x × d_v]` and one `[T_x × T_y]` weight matrix per head.
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub values: Var,
    pub weights: Vec<Var>,
}

impl Attention {
    /// `heads` only affects [`Attention::multihead`]; `d_k` and `d_v` must be
    /// divisible by it.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &Init,
        name: &str,
        query_dim: usize,
        memory_dim: usize,
        d_k: usize,
        d_v: usize,
        heads: usize,
    ) -> Result<Self> {
        if d_k == 0 || d_v == 0 || heads == 0 || query_dim == 0 || memory_dim == 0 {
            return Err(Error::Config(format!("{name}: attention sizes must be positive")));
        }
        if !d_k.is_multiple_of(heads) || !d_v.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "{name}: d_k = {d_k} and d_v = {d_v} must be divisible by heads = {heads}"
            )));
        }
        let mut proj = |suffix: &str, rows: usize, cols: usize| {
            let n = format!("{name}.{suffix}");
            let t = init.glorot(&n, &[rows, cols], rows, cols);
            store.add(n, t)
        };
        Ok(Attention {
            w_query: proj("w_q", query_dim, d_k)?,
            w_key: proj("w_k", memory_dim, d_k)?,
            w_value: proj("w_v", memory_dim, d_v)?,
            query_dim,
            memory_dim,
            d_k,
            d_v,
            heads,
        })
    }

    pub fn cross<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        y: Var,
    ) -> Result<AttentionOutput> {
        self.attend(tape, bound, x, y, 1)
    }

    /// Keys and values drawn from the query stream itself.
    pub fn self_attention<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
    ) -> Result<AttentionOutput> {
        self.attend(tape, bound, x, x, 1)
    }

    /// Splits Q, K, V into `heads` contiguous feature chunks, attends per
    /// chunk with scale `1/√(d_k/heads)`, and concatenates. No output
    /// projection.
    pub fn multihead<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        y: Var,
    ) -> Result<AttentionOutput> {
        self.attend(tape, bound, x, y, self.heads)
    }

    fn attend<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        y: Var,
        heads: usize,
    ) -> Result<AttentionOutput> {
        tape.value(x).dims2("attention")?;
        let (memory_len, _) = tape.value(y).dims2("attention")?;
        if memory_len == 0 {
            return Err(Error::EmptySequence);
        }
        let q = tape.matmul(x, bound[self.w_query])?;
        let k = tape.matmul(y, bound[self.w_key])?;
        let v = tape.matmul(y, bound[self.w_value])?;
        if heads == 1 {
            let (values, weights) = Self::head(tape, q, k, v, self.d_k)?;
            return Ok(AttentionOutput {
                values,
                weights: vec![weights],
            });
        }
        let (dk, dv) = (self.d_k / heads, self.d_v / heads);
        let mut outs = Vec::with_capacity(heads);
        let mut weights = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dk, (h + 1) * dk)?;
            let kh = tape.slice_cols(k, h * dk, (h + 1) * dk)?;
            let vh = tape.slice_cols(v, h * dv, (h + 1) * dv)?;
            let (o, w) = Self::head(tape, qh, kh, vh, dk)?;
            outs.push(o);
            weights.push(w);
        }
        Ok(AttentionOutput {
            values: tape.concat_cols(&outs)?,
            weights,
        })
    }

    fn head<T: Scalar>(tape: &mut Tape<T>, q: Var, k: Var, v: Var, dk: usize) -> Result<(Var, Var)> {
        let kt = tape.transpose(k)?;
        let logits = tape.matmul(q, kt)?;
        let scaled = tape.scale(logits, T::one() / T::lit(dk as f64).sqrt());
        let weights = tape.softmax_rows(scaled)?;
        Ok((tape.matmul(weights, v)?, weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn divisibility_is_config_error() {
        let mut store = ParamStore::<f64>::new();
        let err = Attention::new(&mut store, &Init::new(0), "att", 3, 3, 6, 6, 4).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn single_key_returns_projected_value() {
        let mut store = ParamStore::<f64>::new();
        let att = Attention::new(&mut store, &Init::new(5), "att", 2, 3, 4, 2, 1).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap());
        let y = tape.constant(Tensor::from_rows(&[vec![0.2, -0.4, 1.1]]).unwrap());
        let out = att.cross(&mut tape, &bound, x, y).unwrap();
        let v = crate::ops::matmul(tape.value(y), store.get(att.w_value)).unwrap();
        for r in 0..2 {
            assert_eq!(tape.value(out.values).row(r), v.row(0));
        }
    }

    #[test]
    fn dimension_mismatch() {
        let mut store = ParamStore::<f64>::new();
        let att = Attention::new(&mut store, &Init::new(5), "att", 2, 3, 4, 2, 1).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let y = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(att.cross(&mut tape, &bound, x, y), Err(Error::Shape { .. })));
    }
}
