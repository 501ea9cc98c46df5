//! Full pipeline: backbone feature sequence → LSTM → attention → quantile
//! head and probability.

use qrcl_core::attention::Attention;
use qrcl_core::qrcnn::{median_index, QrcnnBlock, QrcnnConfig, QuantileHead};
use qrcl_core::recurrent::{Baseline, BaselineConfig, BaselineKind, LstmCell, LstmState};
use qrcl_core::{Bound, Init, ParamStore64, Tape64, Tensor64, Var};

use crate::config::{AttentionKind, Backbone, Direction, ModelConfig, QrcnnSequence};
use crate::error::{HarnessError, Result};

/// Per-sample input dimensions `[T × F]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct InputShape {
    pub steps: usize,
    pub features: usize,
}

#[derive(Clone, Debug)]
enum Stage {
    Qrcnn {
        block: QrcnnBlock,
        sequence: QrcnnSequence,
        window: usize,
    },
    Baseline(Baseline),
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub input: InputShape,
    pub store: ParamStore64,
    backbone: Stage,
    /// `(T_y, D_y)` of the backbone feature sequence.
    backbone_dims: (usize, usize),
    lstm: LstmCell,
    attention: Option<Attention>,
    head: QuantileHead,
}

/// Tape handles for one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub raw: Var,
    pub quantiles: Var,
    pub prob: Var,
    /// One weights matrix per head; empty without attention.
    pub attention: Vec<Var>,
}

/// Plain values of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub prob: f64,
    pub quantiles: Vec<f64>,
    pub attention: Vec<Tensor64>,
}

fn stage<T>(name: &str, r: qrcl_core::Result<T>) -> Result<T> {
    r.map_err(|e| HarnessError::Config(format!("{name}: {e}")))
}

impl Model {
    /// Builds the pipeline for `input`, initializing every parameter from
    /// `seed` and its name, so components shared between variants start
    /// identical.
    pub fn new(config: &ModelConfig, input: InputShape, seed: u64) -> Result<Self> {
        if input.steps == 0 || input.features == 0 {
            return Err(HarnessError::Config(format!("input: empty sample shape {input:?}")));
        }
        let init = Init::new(seed);
        let mut store = ParamStore64::new();
        let c = config;
        let (backbone, backbone_dims) = match c.backbone {
            Backbone::Qrcnn => {
                let span = match c.sequence {
                    QrcnnSequence::Branch => input.steps,
                    QrcnnSequence::Window => c.window.min(input.steps),
                };
                let qc = QrcnnConfig {
                    in_channels: input.features,
                    out_channels: c.channels,
                    kernels: c.kernels.iter().map(|&k| k.min(span)).collect(),
                    regions: c.regions,
                    pool: c.pool,
                    stride: c.stride,
                };
                let dims = match c.sequence {
                    QrcnnSequence::Branch => (QrcnnConfig::BRANCHES, qc.row_len()),
                    QrcnnSequence::Window => (input.steps - span + 1, qc.output_len()),
                };
                let block = stage("qrcnn", QrcnnBlock::new(&mut store, &init, "qrcnn", qc))?;
                (
                    Stage::Qrcnn {
                        block,
                        sequence: c.sequence,
                        window: span,
                    },
                    dims,
                )
            }
            kind => {
                let (bk, width, name) = match kind {
                    Backbone::Cnn => (BaselineKind::CnnOnly, c.channels, "cnn"),
                    Backbone::Rnn => (BaselineKind::PlainRnn, c.hidden, "rnn"),
                    _ => (BaselineKind::Tcn, c.channels, "tcn"),
                };
                let mut bc = BaselineConfig::new(bk, input.features, width);
                bc.cnn_layers = c.cnn_layers;
                // keep the valid-convolution stack at least one step long
                bc.cnn_kernel = c.cnn_kernel.min((input.steps - 1) / c.cnn_layers + 1);
                bc.tcn_kernel = c.tcn_kernel;
                bc.tcn_dilations = c.tcn_dilations.clone();
                let steps = match kind {
                    Backbone::Cnn => input.steps - c.cnn_layers * (bc.cnn_kernel - 1),
                    _ => input.steps,
                };
                let net = stage(name, Baseline::new(&mut store, &init, name, &bc))?;
                (Stage::Baseline(net), (steps, width))
            }
        };
        let (_, d_y) = backbone_dims;
        let lstm = stage("lstm", LstmCell::new(&mut store, &init, "lstm", d_y, c.hidden))?;
        let attention = match c.attention {
            AttentionKind::None => None,
            kind => {
                let (q, m) = match (kind, c.direction) {
                    (AttentionKind::SelfAttention, _) => (c.hidden, c.hidden),
                    (_, Direction::LstmToQrcnn) => (c.hidden, d_y),
                    (_, Direction::QrcnnToLstm) => (d_y, c.hidden),
                };
                let heads = if kind == AttentionKind::Multihead { c.heads } else { 1 };
                Some(stage(
                    "attention",
                    Attention::new(&mut store, &init, "attention", q, m, c.d_k, c.d_v, heads),
                )?)
            }
        };
        let readout = c.hidden + if attention.is_some() { c.d_v } else { 0 };
        let head = stage("head", QuantileHead::new(&mut store, &init, "head", readout, c.taus.clone()))?;
        Ok(Model {
            config: c.clone(),
            input,
            store,
            backbone,
            backbone_dims,
            lstm,
            attention,
            head,
        })
    }

    pub fn backbone_dims(&self) -> (usize, usize) {
        self.backbone_dims
    }

    pub fn median_index(&self) -> usize {
        median_index(&self.config.taus)
    }

    fn backbone_forward(&self, tape: &mut Tape64, bound: &Bound, x: Var) -> Result<Var> {
        Ok(match &self.backbone {
            Stage::Qrcnn { block, sequence, window } => {
                let channels = tape.transpose(x)?;
                match sequence {
                    QrcnnSequence::Branch => block.forward_rows(tape, bound, channels)?,
                    QrcnnSequence::Window => {
                        let positions = self.input.steps - window + 1;
                        let rows = (0..positions)
                            .map(|s| {
                                let w = tape.slice_cols(channels, s, s + window)?;
                                block.forward(tape, bound, w)
                            })
                            .collect::<qrcl_core::Result<Vec<_>>>()?;
                        tape.stack_rows(&rows)?
                    }
                }
            }
            Stage::Baseline(net) => net.forward(tape, bound, x)?,
        })
    }

    /// Records the forward pass for one `[T × F]` sample.
    pub fn forward(&self, tape: &mut Tape64, bound: &Bound, x: Var) -> Result<Forward> {
        let shape = tape.value(x).shape();
        if shape != [self.input.steps, self.input.features] {
            return Err(HarnessError::Config(format!(
                "input: expected [{} × {}] samples, got {:?}",
                self.input.steps, self.input.features, shape
            )));
        }
        let y = self.backbone_forward(tape, bound, x)?;
        let init = LstmState::zeros(tape, self.config.hidden);
        let (hs, last) = self.lstm.sequence(tape, bound, y, init)?;
        let (z, weights) = match &self.attention {
            None => (last.h, Vec::new()),
            Some(att) => {
                let out = match (self.config.attention, self.config.direction) {
                    (AttentionKind::SelfAttention, _) => att.self_attention(tape, bound, hs)?,
                    (AttentionKind::Multihead, Direction::LstmToQrcnn) => att.multihead(tape, bound, hs, y)?,
                    (AttentionKind::Multihead, Direction::QrcnnToLstm) => att.multihead(tape, bound, y, hs)?,
                    (_, Direction::LstmToQrcnn) => att.cross(tape, bound, hs, y)?,
                    (_, Direction::QrcnnToLstm) => att.cross(tape, bound, y, hs)?,
                };
                let pooled = tape.mean_rows(out.values)?;
                (tape.concat(&[last.h, pooled])?, out.weights)
            }
        };
        let q = self.head.forward(tape, bound, z)?;
        let m = tape.index(q.raw, self.median_index())?;
        let prob = tape.sigmoid(m);
        Ok(Forward {
            raw: q.raw,
            quantiles: q.quantiles,
            prob,
            attention: weights,
        })
    }

    /// Inference on a fresh tape with frozen parameters.
    pub fn predict(&self, x: &Tensor64) -> Result<Prediction> {
        let mut tape = Tape64::new();
        let bound = self.store.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let f = self.forward(&mut tape, &bound, xv)?;
        Ok(Prediction {
            prob: tape.value(f.prob).data()[0],
            quantiles: tape.value(f.quantiles).data().to_vec(),
            attention: f.attention.iter().map(|&w| tape.value(w).clone()).collect(),
        })
    }

    /// Short variant label such as `qrcnn+cross`.
    pub fn label(&self) -> String {
        format!("{}+{}", self.config.backbone, self.config.attention)
    }
}
