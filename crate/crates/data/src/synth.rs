//! Seeded synthetic datasets and their CSV/schema export.

use std::path::Path;

use qrcl_core::Tensor64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{DataError, Result};
use crate::schema::{DatasetSchema, Role, Scale};
use crate::sequence::SequenceSample;
use crate::table::{ColumnValues, RawColumn, RawTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    /// Feature 0 shifted by ±1; label = mean of feature 0 over time > 0.
    Separable,
    /// Label = the peak steps of the two feature halves coincide.
    CrossSignal,
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Separable => "separable",
            SynthKind::CrossSignal => "cross_signal",
        }
    }
}

impl std::str::FromStr for SynthKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separable" => Ok(SynthKind::Separable),
            "cross_signal" => Ok(SynthKind::CrossSignal),
            _ => Err(DataError::Invalid(format!(
                "unknown synthetic dataset '{s}' (expected separable or cross_signal)"
            ))),
        }
    }
}

/// Height of the bump added to every feature of a block at its peak step.
pub const PEAK_HEIGHT: f64 = 3.0;

/// Sizes of the two cross_signal blocks: the first `F/2` features and the rest.
pub fn cross_blocks(features: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let half = features / 2;
    (0..half, half..features)
}

/// Step whose block sum is largest (earliest on ties).
pub fn block_peak(x: &Tensor64, block: std::ops::Range<usize>) -> usize {
    let steps = x.shape()[0];
    let sums: Vec<f64> = (0..steps)
        .map(|t| block.clone().map(|j| x.get2(t, j)).sum())
        .collect();
    let mut best = 0;
    for t in 1..steps {
        if sums[t] > sums[best] {
            best = t;
        }
    }
    best
}

pub fn synth_dataset(kind: SynthKind, n: usize, steps: usize, features: usize, seed: u64) -> Result<Vec<SequenceSample>> {
    if n < 10 {
        return Err(DataError::Invalid(format!("synthetic datasets need n ≥ 10, got {n}")));
    }
    if steps == 0 || features == 0 {
        return Err(DataError::Invalid("steps and features must be positive".into()));
    }
    if kind == SynthKind::CrossSignal && (features < 2 || steps < 2) {
        return Err(DataError::Invalid("cross_signal needs at least 2 features and 2 steps".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut data: Vec<f64> = (0..steps * features).map(|_| rng.sample(StandardNormal)).collect();
        let y = match kind {
            SynthKind::Separable => {
                let shift = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                for t in 0..steps {
                    data[t * features] += shift;
                }
                let mean = (0..steps).map(|t| data[t * features]).sum::<f64>() / steps as f64;
                u8::from(mean > 0.0)
            }
            SynthKind::CrossSignal => {
                let (a, b) = cross_blocks(features);
                let pa = rng.random_range(0..steps);
                let pb = if rng.random_bool(0.5) {
                    pa
                } else {
                    (pa + rng.random_range(1..steps)) % steps
                };
                for j in a.clone() {
                    data[pa * features + j] += PEAK_HEIGHT;
                }
                for j in b.clone() {
                    data[pb * features + j] += PEAK_HEIGHT;
                }
                let x = Tensor64::new(vec![steps, features], data.clone())?;
                u8::from(block_peak(&x, a) == block_peak(&x, b))
            }
        };
        out.push(SequenceSample {
            x: Tensor64::new(vec![steps, features], data)?,
            y,
            id: i.to_string(),
        });
    }
    Ok(out)
}

/// Column name of feature `j` at step `t` in exported CSVs.
pub fn column_name(j: usize, t: usize) -> String {
    format!("f{j}_t{t}")
}

/// Schema that re-ingests [`write_csv`] output unchanged.
pub fn schema_for(name: &str, steps: usize, features: usize) -> DatasetSchema {
    let mut columns = vec![("label".to_string(), Role::Label)];
    for j in 0..features {
        for t in 0..steps {
            columns.push((
                column_name(j, t),
                Role::Sequence {
                    family: format!("f{j}"),
                    step: t,
                },
            ));
        }
    }
    DatasetSchema {
        name: name.to_string(),
        columns,
        positive_label: "1".into(),
        id: Some("id".into()),
        delimiter: b',',
        scale: Scale::None,
        adapter: Default::default(),
    }
}

/// The table [`write_csv`] followed by [`crate::load_csv`] would produce.
pub fn to_table(samples: &[SequenceSample], schema: &DatasetSchema) -> Result<RawTable> {
    let first = samples
        .first()
        .ok_or_else(|| DataError::Invalid("no samples".into()))?;
    let (steps, features) = (first.steps(), first.features());
    let mut columns = Vec::with_capacity(steps * features);
    for j in 0..features {
        for t in 0..steps {
            columns.push(RawColumn {
                name: column_name(j, t),
                role: Role::Sequence {
                    family: format!("f{j}"),
                    step: t,
                },
                values: ColumnValues::Numeric(samples.iter().map(|s| Some(s.x.get2(t, j))).collect()),
            });
        }
    }
    Ok(RawTable {
        schema: schema.clone(),
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        labels: samples.iter().map(|s| s.y).collect(),
        columns,
        dropped: 0,
    })
}

/// Writes `id,label,f0_t0,…` with shortest round-trip float formatting.
pub fn write_csv(samples: &[SequenceSample], path: &Path) -> Result<()> {
    let first = samples
        .first()
        .ok_or_else(|| DataError::Invalid("no samples to write".into()))?;
    let (steps, features) = (first.steps(), first.features());
    let mut w = csv::Writer::from_path(path).map_err(|e| DataError::csv(path, e))?;
    let mut header = vec!["id".to_string(), "label".to_string()];
    for j in 0..features {
        for t in 0..steps {
            header.push(column_name(j, t));
        }
    }
    w.write_record(&header).map_err(|e| DataError::csv(path, e))?;
    for s in samples {
        if s.x.shape() != [steps, features] {
            return Err(DataError::Invalid(format!("sample {} has a different shape", s.id)));
        }
        let mut rec = vec![s.id.clone(), s.y.to_string()];
        for j in 0..features {
            for t in 0..steps {
                rec.push(s.x.get2(t, j).to_string());
            }
        }
        w.write_record(&rec).map_err(|e| DataError::csv(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}
