use std::time::Instant;

use qrcl_core::metrics;
use qrcl_data::SequenceSample;

use crate::config::AttentionKind;
use crate::error::{HarnessError, Result};
use crate::model::Model;
use crate::profile::{count_flops, count_params, median};
use crate::report::{DegenerateFlags, MetricsReport};

/// A report together with the per-sample scores it was computed from.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Evaluation {
    /// ROC points, or `None` when the set has a single class.
    pub fn roc(&self) -> Option<Vec<metrics::RocPoint>> {
        metrics::roc_curve(&self.scores, &self.labels).ok()
    }
}

/// Scores every sample with the median-level probability and summarizes at
/// `threshold`. Training fields are left empty.
pub fn evaluate(model: &Model, samples: &[SequenceSample], threshold: f64) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(HarnessError::Config("evaluate: no samples".into()));
    }
    let mut scores = Vec::with_capacity(samples.len());
    let mut times = Vec::with_capacity(samples.len());
    let mut attention = None;
    for s in samples {
        let start = Instant::now();
        let p = model.predict(&s.x)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        if attention.is_none() && !p.attention.is_empty() {
            attention = Some(
                p.attention
                    .iter()
                    .map(|w| (0..w.shape()[0]).map(|r| w.row(r).to_vec()).collect())
                    .collect(),
            );
        }
        scores.push(p.prob);
    }
    let labels: Vec<u8> = samples.iter().map(|s| s.y).collect();
    let counts = metrics::confusion(&scores, &labels, threshold)?;
    let auc = match metrics::auc(&scores, &labels) {
        Ok(a) => Some(a),
        Err(qrcl_core::Error::UndefinedAuc(reason)) => {
            log::warn!("AUC undefined: {reason}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let (acc, rec, prec, f1) = (counts.accuracy(), counts.recall(), counts.precision(), counts.f1());
    let mut notes = Vec::new();
    if model.config.attention == AttentionKind::Multihead {
        notes.push("multihead attention concatenates heads without an output projection".to_string());
    }
    let report = MetricsReport {
        variant: model.label(),
        samples: samples.len(),
        threshold,
        accuracy: acc.value,
        recall: rec.value,
        precision: prec.value,
        f1: f1.value,
        auc,
        confusion: counts,
        parameter_count: count_params(model),
        flops_per_inference: count_flops(model)?,
        inference_time_ms_median: median(&mut times).unwrap_or(0.0),
        training_time_s: 0.0,
        loss_trace: Vec::new(),
        degenerate_flags: DegenerateFlags {
            accuracy: acc.degenerate,
            precision: prec.degenerate,
            recall: rec.degenerate,
            f1: f1.degenerate,
            auc: auc.is_none(),
        },
        attention_weights_sample: attention,
        notes,
    };
    Ok(Evaluation { report, scores, labels })
}
