//! LSTM cell and sequence layer, plus the plain RNN, CNN and TCN baselines.

use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::param::{Bound, Init, ParamId, ParamStore};
use crate::qrcnn::Conv1d;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Hidden and memory-cell state, both `[H]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros<T: Scalar>(tape: &mut Tape<T>, hidden: usize) -> Self {
        LstmState {
            h: tape.constant(Tensor::zeros(&[hidden])),
            c: tape.constant(Tensor::zeros(&[hidden])),
        }
    }
}

/// Transient gate activations of one step.
#[derive(Clone, Copy, Debug)]
pub struct Gates {
    pub forget: Var,
    pub input: Var,
    pub candidate: Var,
    pub output: Var,
}

/// Gate weights act on the concatenation `[h_{t−1}, x_t]`, so every weight
/// matrix is `[H × (H + D)]` with the hidden columns first.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub hidden: usize,
    pub input: usize,
    pub w_forget: ParamId,
    pub w_input: ParamId,
    pub w_candidate: ParamId,
    pub w_output: ParamId,
    pub b_forget: ParamId,
    pub b_input: ParamId,
    pub b_candidate: ParamId,
    pub b_output: ParamId,
}

impl LstmCell {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &Init,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        if hidden == 0 || input == 0 {
            return Err(Error::Config(format!("{name}: hidden and input sizes must be positive")));
        }
        let mut weight = |gate: &str| {
            let n = format!("{name}.w_{gate}");
            let t = init.glorot(&n, &[hidden, hidden + input], hidden + input, hidden);
            store.add(n, t)
        };
        let (w_forget, w_input, w_candidate, w_output) =
            (weight("f")?, weight("i")?, weight("c")?, weight("o")?);
        let mut bias = |gate: &str| store.add(format!("{name}.b_{gate}"), Tensor::zeros(&[hidden]));
        Ok(LstmCell {
            hidden,
            input,
            w_forget,
            w_input,
            w_candidate,
            w_output,
            b_forget: bias("f")?,
            b_input: bias("i")?,
            b_candidate: bias("c")?,
            b_output: bias("o")?,
        })
    }

    fn gate<T: Scalar>(
        tape: &mut Tape<T>,
        bound: &Bound,
        w: ParamId,
        b: ParamId,
        z: Var,
    ) -> Result<Var> {
        let a = tape.matvec(bound[w], z)?;
        tape.add(a, bound[b])
    }

    /// One step, returning the gates alongside the new state:
    /// `f, i, o = σ(W·[h, x] + b)`, `C̃ = tanh(W_c·[h, x] + b_c)`,
    /// `C = f⊙C_prev + i⊙C̃`, `h = o⊙tanh(C)`.
    pub fn step_with_gates<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        state: LstmState,
        x_t: Var,
    ) -> Result<(LstmState, Gates)> {
        let shapes_ok = tape.value(state.h).shape() == [self.hidden]
            && tape.value(state.c).shape() == [self.hidden];
        if !shapes_ok {
            return Err(Error::shape("lstm_step", tape.value(state.h).shape(), &[self.hidden]));
        }
        if tape.value(x_t).shape() != [self.input] {
            return Err(Error::shape("lstm_step", tape.value(x_t).shape(), &[self.input]));
        }
        let z = tape.concat(&[state.h, x_t])?;
        let f = Self::gate(tape, bound, self.w_forget, self.b_forget, z)?;
        let forget = tape.sigmoid(f);
        let i = Self::gate(tape, bound, self.w_input, self.b_input, z)?;
        let input = tape.sigmoid(i);
        let c = Self::gate(tape, bound, self.w_candidate, self.b_candidate, z)?;
        let candidate = tape.tanh(c);
        let kept = tape.mul(forget, state.c)?;
        let written = tape.mul(input, candidate)?;
        let cell = tape.add(kept, written)?;
        let o = Self::gate(tape, bound, self.w_output, self.b_output, z)?;
        let output = tape.sigmoid(o);
        let squashed = tape.tanh(cell);
        let h = tape.mul(output, squashed)?;
        Ok((
            LstmState { h, c: cell },
            Gates {
                forget,
                input,
                candidate,
                output,
            },
        ))
    }

    pub fn step<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        state: LstmState,
        x_t: Var,
    ) -> Result<LstmState> {
        Ok(self.step_with_gates(tape, bound, state, x_t)?.0)
    }

    /// Runs over the rows of `x: [T × D]`; returns every hidden state as
    /// `[T × H]` and the final state.
    pub fn sequence<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        init: LstmState,
    ) -> Result<(Var, LstmState)> {
        let (steps, _) = tape.value(x).dims2("lstm_sequence")?;
        if steps == 0 {
            return Err(Error::EmptySequence);
        }
        let mut state = init;
        let mut hs = Vec::with_capacity(steps);
        for t in 0..steps {
            let x_t = tape.row(x, t)?;
            state = self.step(tape, bound, state, x_t)?;
            hs.push(state.h);
        }
        Ok((tape.stack_rows(&hs)?, state))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    PlainRnn,
    CnnOnly,
    Tcn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub input: usize,
    /// Hidden size (rnn) or channel count (cnn, tcn).
    pub hidden: usize,
    pub cnn_kernel: usize,
    pub cnn_layers: usize,
    pub tcn_kernel: usize,
    pub tcn_dilations: Vec<usize>,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind, input: usize, hidden: usize) -> Self {
        BaselineConfig {
            kind,
            input,
            hidden,
            cnn_kernel: 3,
            cnn_layers: 2,
            tcn_kernel: 3,
            tcn_dilations: vec![1, 2, 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 {
            return Err(Error::Config("baseline sizes must be positive".into()));
        }
        match self.kind {
            BaselineKind::CnnOnly if self.cnn_kernel == 0 || self.cnn_layers == 0 => {
                Err(Error::Config("cnn kernel and layer count must be positive".into()))
            }
            BaselineKind::Tcn if self.tcn_kernel == 0 || self.tcn_dilations.is_empty() => {
                Err(Error::Config("tcn needs a positive kernel and at least one dilation".into()))
            }
            BaselineKind::Tcn
                if self.tcn_dilations[0] == 0
                    || self.tcn_dilations.windows(2).any(|w| w[0] >= w[1]) =>
            {
                Err(Error::Config(format!(
                    "tcn dilations must be positive and strictly increasing: {:?}",
                    self.tcn_dilations
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TcnBlock {
    pub conv: Conv1d,
    pub residual: Conv1d,
}

/// `h_t = tanh(W·[h_{t−1}, x_t] + b)`.
#[derive(Clone, Debug)]
pub struct PlainRnn {
    pub weight: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

#[derive(Clone, Debug)]
pub enum Baseline {
    PlainRnn(PlainRnn),
    Cnn(Vec<Conv1d>),
    Tcn(Vec<TcnBlock>),
}

impl Baseline {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &Init,
        name: &str,
        cfg: &BaselineConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        Ok(match cfg.kind {
            BaselineKind::PlainRnn => {
                let wname = format!("{name}.weight");
                let w = init.glorot(&wname, &[h, h + cfg.input], h + cfg.input, h);
                Baseline::PlainRnn(PlainRnn {
                    weight: store.add(wname, w)?,
                    bias: store.add(format!("{name}.bias"), Tensor::zeros(&[h]))?,
                    hidden: h,
                })
            }
            BaselineKind::CnnOnly => {
                let layers = (0..cfg.cnn_layers)
                    .map(|l| {
                        let c_in = if l == 0 { cfg.input } else { h };
                        Conv1d::new(
                            store,
                            init,
                            &format!("{name}.conv{l}"),
                            c_in,
                            h,
                            cfg.cnn_kernel,
                            ConvSpec::default(),
                        )
                    })
                    .collect::<Result<_>>()?;
                Baseline::Cnn(layers)
            }
            BaselineKind::Tcn => {
                let blocks = cfg
                    .tcn_dilations
                    .iter()
                    .enumerate()
                    .map(|(l, &d)| {
                        let c_in = if l == 0 { cfg.input } else { h };
                        let spec = ConvSpec {
                            stride: 1,
                            dilation: d,
                            pad_left: (cfg.tcn_kernel - 1) * d,
                        };
                        let conv = Conv1d::new(
                            store,
                            init,
                            &format!("{name}.block{l}.conv"),
                            c_in,
                            h,
                            cfg.tcn_kernel,
                            spec,
                        )?;
                        let rname = format!("{name}.block{l}.residual");
                        let residual =
                            Conv1d::new(store, init, &rname, c_in, h, 1, ConvSpec::default())?;
                        if c_in == h {
                            let mut eye = Tensor::zeros(&[h, h, 1]);
                            for c in 0..h {
                                eye.data_mut()[c * h + c] = T::one();
                            }
                            *store.get_mut(residual.weight) = eye;
                        }
                        Ok(TcnBlock { conv, residual })
                    })
                    .collect::<Result<_>>()?;
                Baseline::Tcn(blocks)
            }
        })
    }

    /// Maps `x: [T × D]` to a feature sequence `[T' × H]`; `T' = T` except
    /// for the valid-convolution CNN stack.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let (steps, _) = tape.value(x).dims2("baseline")?;
        if steps == 0 {
            return Err(Error::EmptySequence);
        }
        match self {
            Baseline::PlainRnn(rnn) => {
                let mut h = tape.constant(Tensor::zeros(&[rnn.hidden]));
                let mut hs = Vec::with_capacity(steps);
                for t in 0..steps {
                    let x_t = tape.row(x, t)?;
                    let z = tape.concat(&[h, x_t])?;
                    let a = tape.matvec(bound[rnn.weight], z)?;
                    let a = tape.add(a, bound[rnn.bias])?;
                    h = tape.tanh(a);
                    hs.push(h);
                }
                tape.stack_rows(&hs)
            }
            Baseline::Cnn(layers) => {
                let needed = layers.iter().map(|l| l.kernel - 1).sum::<usize>() + 1;
                if steps < needed {
                    return Err(Error::SequenceTooShort {
                        len: steps,
                        kernel: needed,
                    });
                }
                let mut cur = tape.transpose(x)?;
                for layer in layers {
                    let a = layer.forward(tape, bound, cur)?;
                    cur = tape.tanh(a);
                }
                tape.transpose(cur)
            }
            Baseline::Tcn(blocks) => {
                let mut cur = tape.transpose(x)?;
                for block in blocks {
                    let a = block.conv.forward(tape, bound, cur)?;
                    let a = tape.tanh(a);
                    let skip = block.residual.forward(tape, bound, cur)?;
                    cur = tape.add(a, skip)?;
                }
                tape.transpose(cur)
            }
        }
    }
}
