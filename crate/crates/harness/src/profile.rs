//! Parameter, FLOP and latency accounting.

use std::time::Instant;

use qrcl_core::{Tape64, Tensor64};

use crate::error::Result;
use crate::model::Model;

/// Total trainable scalars.
pub fn count_params(model: &Model) -> usize {
    model.store.scalar_count()
}

/// FLOPs of one forward pass under the cost table in `docs/flops.md`.
/// Parameter binding and the input leaf cost nothing; the count does not
/// depend on input values.
pub fn count_flops(model: &Model) -> Result<u64> {
    let mut tape = Tape64::new();
    let bound = model.store.bind_frozen(&mut tape);
    let x = tape.constant(Tensor64::zeros(&[model.input.steps, model.input.features]));
    let mark = tape.len();
    model.forward(&mut tape, &bound, x)?;
    Ok(tape.flops_since(mark))
}

/// Median wall-clock milliseconds of a single-sample forward pass.
pub fn median_latency_ms<'a>(model: &Model, samples: impl IntoIterator<Item = &'a Tensor64>) -> Result<f64> {
    let mut times = Vec::new();
    for x in samples {
        let start = Instant::now();
        model.predict(x)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(median(&mut times).unwrap_or(0.0))
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}
