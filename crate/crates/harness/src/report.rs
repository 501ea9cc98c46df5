//! Run reports and their JSON/CSV forms.

use std::path::Path;

use qrcl_core::metrics::ConfusionCounts;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateFlags {
    pub accuracy: bool,
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
    /// AUC is undefined because the evaluation set has a single class.
    pub auc: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub samples: usize,
    pub threshold: f64,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// `null` when undefined; see `degenerate_flags.auc`.
    pub auc: Option<f64>,
    pub confusion: ConfusionCounts,
    pub parameter_count: usize,
    pub flops_per_inference: u64,
    pub inference_time_ms_median: f64,
    pub training_time_s: f64,
    pub loss_trace: Vec<f64>,
    pub degenerate_flags: DegenerateFlags,
    /// Attention weights for the first evaluated sample, one `[T_x × T_y]`
    /// matrix per head.
    pub attention_weights_sample: Option<Vec<Vec<Vec<f64>>>>,
    pub notes: Vec<String>,
}

fn bits(v: f64) -> u64 {
    v.to_bits()
}

impl MetricsReport {
    /// Bitwise equality of everything except the wall-clock fields
    /// `inference_time_ms_median` and `training_time_s`.
    pub fn same_outcome(&self, other: &MetricsReport) -> bool {
        let floats = |r: &MetricsReport| {
            let mut v = vec![bits(r.threshold), bits(r.accuracy), bits(r.recall), bits(r.precision), bits(r.f1)];
            v.push(r.auc.map_or(u64::MAX, bits));
            v.extend(r.loss_trace.iter().copied().map(bits));
            v
        };
        let weights = |r: &MetricsReport| {
            r.attention_weights_sample
                .as_ref()
                .map(|w| w.iter().flatten().flatten().copied().map(bits).collect::<Vec<_>>())
        };
        self.variant == other.variant
            && self.samples == other.samples
            && self.confusion == other.confusion
            && self.parameter_count == other.parameter_count
            && self.flops_per_inference == other.flops_per_inference
            && self.degenerate_flags == other.degenerate_flags
            && self.notes == other.notes
            && self.loss_trace.len() == other.loss_trace.len()
            && floats(self) == floats(other)
            && weights(self) == weights(other)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Writes `bytes`, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

/// `epoch,loss` with epochs counted from 1.
pub fn loss_csv(trace: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in trace.iter().enumerate() {
        s += &format!("{},{l}\n", e + 1);
    }
    s
}

pub fn write_roc(path: &Path, points: &[qrcl_core::metrics::RocPoint]) -> Result<()> {
    let mut buf = Vec::new();
    qrcl_core::metrics::write_roc_csv(points, &mut buf).map_err(|e| HarnessError::io(path, e))?;
    write_bytes(path, &buf)
}
