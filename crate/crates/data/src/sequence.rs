use qrcl_core::Tensor64;

use crate::error::{DataError, Result};
use crate::preprocess::EncodedTable;

/// One customer: a time-major `[T × F]` feature matrix and a binary label.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub x: Tensor64,
    pub y: u8,
    pub id: String,
}

impl SequenceSample {
    pub fn steps(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn features(&self) -> usize {
        self.x.shape()[1]
    }
}

/// Step `t` of each sample holds the grouped features at `t` followed by the
/// static features repeated. Tables without groups give `T = 1`.
pub fn build_sequences(table: &EncodedTable) -> Result<Vec<SequenceSample>> {
    let step_width = table.step_names.len();
    let static_width = table.static_names.len();
    let steps = if step_width == 0 { 1 } else { table.steps };
    let width = step_width + static_width;
    if width == 0 {
        return Err(DataError::Invalid("encoded table has no features".into()));
    }
    (0..table.len())
        .map(|i| {
            let grouped = &table.step_rows[i];
            let fixed = &table.static_rows[i];
            if grouped.len() != steps * step_width || fixed.len() != static_width {
                return Err(DataError::Invalid(format!("row {i} has the wrong encoded width")));
            }
            let mut data = Vec::with_capacity(steps * width);
            for t in 0..steps {
                data.extend_from_slice(&grouped[t * step_width..(t + 1) * step_width]);
                data.extend_from_slice(fixed);
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(DataError::Invalid(format!("row {i} has non-finite features")));
            }
            Ok(SequenceSample {
                x: Tensor64::new(vec![steps, width], data)?,
                y: table.labels[i],
                id: table.ids[i].clone(),
            })
        })
        .collect()
}
