//! Training objectives recorded on the tape.

use crate::error::{Error, Result};
use crate::qrcnn::{median_index, validate_taus};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Quantile levels for the pinball loss; the reduction is always the mean
/// over levels.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileLossSpec {
    taus: Vec<f64>,
}

impl QuantileLossSpec {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        validate_taus(&taus)?;
        Ok(QuantileLossSpec { taus })
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }
}

/// `Σ_τ ρ_τ(y − ŷ_τ) / |τ|`, `ρ_τ(e) = max(τe, (τ−1)e)`. Subgradient 0 at `e = 0`.
pub fn pinball_loss<T: Scalar>(
    tape: &mut Tape<T>,
    y_hat: Var,
    y: f64,
    spec: &QuantileLossSpec,
) -> Result<Var> {
    if !y.is_finite() {
        return Err(Error::InvalidInput(format!("pinball target must be finite, got {y}")));
    }
    let taus: Vec<T> = spec.taus.iter().map(|&t| T::lit(t)).collect();
    tape.pinball(y_hat, T::lit(y), &taus)
}

/// `−[y ln p + (1−y) ln(1−p)]` with `p` clamped to `[1e-12, 1 − 1e-12]`.
pub fn bce_loss<T: Scalar>(tape: &mut Tape<T>, p: Var, y: f64) -> Result<Var> {
    tape.bce(p, T::lit(y))
}

/// Classification probability: the logistic of the raw median-level output.
pub fn median_probability<T: Scalar>(tape: &mut Tape<T>, raw: Var, taus: &[f64]) -> Result<Var> {
    let m = tape.index(raw, median_index(taus))?;
    Ok(tape.sigmoid(m))
}

/// `λ · pinball(raw, y) + (1 − λ) · bce(σ(raw_median), y)` for a binary label.
pub fn combined_loss<T: Scalar>(
    tape: &mut Tape<T>,
    raw: Var,
    y: f64,
    lambda: f64,
    spec: &QuantileLossSpec,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("loss weight λ must lie in [0, 1], got {lambda}")));
    }
    let quantile = pinball_loss(tape, raw, y, spec)?;
    let prob = median_probability(tape, raw, &spec.taus)?;
    let class = bce_loss(tape, prob, y)?;
    let a = tape.scale(quantile, T::lit(lambda));
    let b = tape.scale(class, T::lit(1.0 - lambda));
    tape.add(a, b)
}
