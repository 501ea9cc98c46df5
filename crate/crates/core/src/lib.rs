//! Sequence-modeling core: a reverse-mode autodiff tape over dense tensors,
//! the quantile-region CNN block and quantile head, LSTM and baseline
//! recurrent/convolutional layers, scaled dot-product attention, training
//! objectives and evaluation metrics.
//!
//! All math is generic over [`Scalar`] (`f32` or `f64`). The `*64` aliases
//! below are what the training harness uses; gradient checking is `f64` only.

pub mod attention;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod objectives;
pub mod ops;
pub mod optim;
pub mod param;
pub mod qrcnn;
pub mod recurrent;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use ops::{ConvSpec, PoolMode};
pub use param::{Bound, Init, ParamGrads, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tape64 = Tape<f64>;
pub type ParamStore64 = ParamStore<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape32 = Tape<f32>;
pub type ParamStore32 = ParamStore<f32>;
