//! Central finite-difference gradient checking.
//!
//! The numeric side only evaluates forward passes, so it stays independent of
//! every backward rule it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub step: f64,
    /// Relative tolerance for entries whose analytic gradient is at least `small`.
    pub rel_tol: f64,
    /// Absolute tolerance below `small`.
    pub abs_tol: f64,
    pub small: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_tol: 1e-6,
            small: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(input, flat index, analytic, numeric)` for each failing entry.
    pub failures: Vec<(usize, usize, f64, f64)>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl GradCheck {
    /// Checks `d build(inputs) / d inputs`. `build` records a scalar loss on
    /// the tape from one leaf per input.
    pub fn run<F>(&self, inputs: &[Tensor<f64>], build: F) -> Result<GradReport>
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        let grads = tape.backward(loss)?;

        let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
            let loss = build(&mut tape, &vars)?;
            Ok(tape.value(loss).data()[0])
        };

        let mut report = GradReport::default();
        let mut work: Vec<Tensor<f64>> = inputs.to_vec();
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads
                .get(vars[k])
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(input.shape()));
            for idx in 0..input.numel() {
                let orig = input.data()[idx];
                work[k].data_mut()[idx] = orig + self.step;
                let up = eval(&work)?;
                work[k].data_mut()[idx] = orig - self.step;
                let down = eval(&work)?;
                work[k].data_mut()[idx] = orig;
                let numeric = (up - down) / (2.0 * self.step);
                let a = analytic.data()[idx];
                if !numeric.is_finite() || !a.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "non-finite gradient at input {k}[{idx}]"
                    )));
                }
                let abs = (a - numeric).abs();
                let rel = abs / a.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
                report.checked += 1;
                report.max_abs_err = report.max_abs_err.max(abs);
                let ok = if a.abs() < self.small {
                    abs < self.abs_tol
                } else {
                    report.max_rel_err = report.max_rel_err.max(rel);
                    rel < self.rel_tol
                };
                if !ok {
                    report.failures.push((k, idx, a, numeric));
                }
            }
        }
        Ok(report)
    }
}

/// Reduces a tensor-valued output to a scalar with fixed pseudo-random
/// weights in `[−1, 1]` drawn from `seed`, so one backward pass covers the
/// whole Jacobian.
pub fn weighted_sum(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect())?;
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}
