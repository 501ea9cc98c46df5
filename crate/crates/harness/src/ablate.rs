//! Variant comparisons under shared splits, sample order and seeds.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{AttentionKind, Backbone, ExperimentConfig};
use crate::dataset;
use crate::error::{HarnessError, Result};
use crate::model::Model;
use crate::profile::median;
use crate::report::{write_text, MetricsReport};
use crate::train::{final_report, train_epochs, TrainState};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Backbone,
    Attention,
}

impl std::str::FromStr for Axis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backbone" => Ok(Axis::Backbone),
            "attention" => Ok(Axis::Attention),
            _ => Err(HarnessError::Config(format!("unknown axis '{s}' (expected backbone or attention)"))),
        }
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Backbone => "backbone",
            Axis::Attention => "attention",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub backbone: Backbone,
    pub attention: AttentionKind,
}

impl Variant {
    pub fn label(self) -> String {
        format!("{}+{}", self.backbone, self.attention)
    }

    fn apply(self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut c = cfg.clone();
        c.model.backbone = self.backbone;
        c.model.attention = self.attention;
        c
    }
}

/// The standard variant set: backbones without attention, or attention
/// kinds on the configured backbone.
pub fn variants(axis: Axis, cfg: &ExperimentConfig) -> Vec<Variant> {
    match axis {
        Axis::Backbone => [Backbone::Cnn, Backbone::Rnn, Backbone::Tcn, Backbone::Qrcnn]
            .into_iter()
            .map(|backbone| Variant {
                backbone,
                attention: AttentionKind::None,
            })
            .collect(),
        Axis::Attention => [AttentionKind::SelfAttention, AttentionKind::Multihead, AttentionKind::Cross]
            .into_iter()
            .map(|attention| Variant {
                backbone: cfg.model.backbone,
                attention,
            })
            .collect(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRun {
    pub axis: String,
    pub seed: u64,
    #[serde(flatten)]
    pub report: MetricsReport,
}

/// Per-variant medians over seeds.
#[derive(Clone, Debug, Serialize)]
pub struct MedianRow {
    pub variant: String,
    pub accuracy: f64,
    pub recall: f64,
    pub f1: f64,
    /// Over the seeds where AUC was defined.
    pub auc: Option<f64>,
    pub parameter_count: usize,
    pub flops_per_inference: u64,
    pub inference_time_ms_median: f64,
    pub training_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct Ablation {
    pub axis: Axis,
    pub variants: Vec<Variant>,
    pub runs: Vec<AblationRun>,
}

fn med(mut v: Vec<f64>) -> Option<f64> {
    median(&mut v)
}

impl Ablation {
    pub fn medians(&self) -> Vec<MedianRow> {
        self.variants
            .iter()
            .filter_map(|v| {
                let label = v.label();
                let runs: Vec<&MetricsReport> = self
                    .runs
                    .iter()
                    .map(|r| &r.report)
                    .filter(|r| r.variant == label)
                    .collect();
                let first = runs.first()?;
                let col = |f: fn(&MetricsReport) -> f64| med(runs.iter().map(|r| f(r)).collect());
                Some(MedianRow {
                    variant: label.clone(),
                    accuracy: col(|r| r.accuracy)?,
                    recall: col(|r| r.recall)?,
                    f1: col(|r| r.f1)?,
                    auc: med(runs.iter().filter_map(|r| r.auc).collect()),
                    parameter_count: first.parameter_count,
                    flops_per_inference: first.flops_per_inference,
                    inference_time_ms_median: col(|r| r.inference_time_ms_median)?,
                    training_time_s: col(|r| r.training_time_s)?,
                })
            })
            .collect()
    }

    pub fn median_auc(&self, v: Variant) -> Option<f64> {
        let label = v.label();
        self.medians().into_iter().find(|m| m.variant == label)?.auc
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.runs).expect("runs serialize")
    }

    /// Per-seed rows followed by `median` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "variant,seed,accuracy,recall,f1,auc,parameter_count,flops_per_inference,inference_time_ms_median,training_time_s\n",
        );
        let auc = |a: Option<f64>| a.map_or(String::new(), |a| a.to_string());
        for r in &self.runs {
            let m = &r.report;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                m.variant,
                r.seed,
                m.accuracy,
                m.recall,
                m.f1,
                auc(m.auc),
                m.parameter_count,
                m.flops_per_inference,
                m.inference_time_ms_median,
                m.training_time_s
            );
        }
        for m in self.medians() {
            let _ = writeln!(
                s,
                "{},median,{},{},{},{},{},{},{},{}",
                m.variant,
                m.accuracy,
                m.recall,
                m.f1,
                auc(m.auc),
                m.parameter_count,
                m.flops_per_inference,
                m.inference_time_ms_median,
                m.training_time_s
            );
        }
        s
    }

    /// Fixed-width table of the median rows.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<18} {:>8} {:>8} {:>8} {:>8} {:>10} {:>12} {:>10} {:>10}\n",
            "variant", "accuracy", "recall", "f1", "auc", "params", "flops", "infer_ms", "train_s"
        );
        for m in self.medians() {
            let auc = m.auc.map_or("undef".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(
                s,
                "{:<18} {:>8.4} {:>8.4} {:>8.4} {:>8} {:>10} {:>12} {:>10.4} {:>10.2}",
                m.variant,
                m.accuracy,
                m.recall,
                m.f1,
                auc,
                m.parameter_count,
                m.flops_per_inference,
                m.inference_time_ms_median,
                m.training_time_s
            );
        }
        s
    }

    fn write(&self, out: &Path) -> Result<()> {
        write_text(&out.join("ablation.json"), &self.to_json())?;
        write_text(&out.join("ablation.csv"), &self.to_csv())
    }
}

/// Runs every variant for every seed in `cfg.ablate_seeds`. For a given
/// seed all variants share the split, the sample order and the initial
/// values of same-named parameters. When `out` is set, results so far are
/// rewritten after each run, so a failing variant leaves them on disk.
pub fn ablate(cfg: &ExperimentConfig, axis: Axis, variants: &[Variant], out: Option<&Path>) -> Result<Ablation> {
    cfg.validate()?;
    let mut result = Ablation {
        axis,
        variants: variants.to_vec(),
        runs: Vec::new(),
    };
    for &seed in &cfg.ablate_seeds {
        let mut base = cfg.clone();
        base.seed = seed;
        let data = dataset::load(&base)?;
        for &v in variants {
            let c = v.apply(&base);
            let run = (|| {
                let mut state = TrainState::new(&c, Model::new(&c.model, data.input, seed)?);
                train_epochs(&c, &mut state, &data.train, |_| Ok(()))?;
                final_report(&c, &state, &data)
            })();
            let eval = match run {
                Ok(e) => e,
                Err(e) => {
                    log::error!("variant {} seed {seed} failed: {e}", v.label());
                    if let Some(out) = out {
                        result.write(out)?;
                    }
                    return Err(e);
                }
            };
            log::info!(
                "{} seed {seed}: accuracy {:.4} auc {:?}",
                v.label(),
                eval.report.accuracy,
                eval.report.auc
            );
            result.runs.push(AblationRun {
                axis: axis.name().to_string(),
                seed,
                report: eval.report,
            });
            if let Some(out) = out {
                result.write(out)?;
            }
        }
    }
    Ok(result)
}

/// `<out>/ablation.json`.
pub fn json_path(out: &Path) -> PathBuf {
    out.join("ablation.json")
}
