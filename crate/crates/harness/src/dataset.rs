//! Builds the train/test samples a config describes.

use qrcl_data::{
    build_sequences, fit, load_csv, split_indices, synth, DatasetSchema, PreprocessStats, RawTable, SequenceSample,
};

use crate::config::{DataSource, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::model::InputShape;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub schema: DatasetSchema,
    /// Fitted on the training split only.
    pub stats: PreprocessStats,
    pub train: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
    pub input: InputShape,
}

fn raw_table(cfg: &ExperimentConfig) -> Result<RawTable> {
    let d = &cfg.data;
    Ok(match d.source {
        DataSource::Synth => {
            let samples = qrcl_data::synth_dataset(d.kind, d.n, d.steps, d.features, cfg.seed)?;
            let schema = synth::schema_for(d.kind.name(), d.steps, d.features);
            synth::to_table(&samples, &schema)?
        }
        DataSource::Csv => {
            let (schema, path) = d
                .schema
                .as_deref()
                .zip(d.path.as_deref())
                .ok_or_else(|| HarnessError::Config("data.source = csv needs data.schema and data.path".into()))?;
            let schema = DatasetSchema::from_file(schema)?;
            load_csv(path, &schema)?
        }
    })
}

/// Loads, splits with `seed`, fits preprocessing on the training rows and
/// encodes both halves. Deterministic in the config.
pub fn load(cfg: &ExperimentConfig) -> Result<Dataset> {
    let raw = raw_table(cfg)?;
    let (train_idx, test_idx) = split_indices(&raw.labels, cfg.data.train_frac, cfg.seed)?;
    let train_raw = raw.select(&train_idx);
    let stats = fit(&train_raw)?;
    let train = build_sequences(&stats.apply(&train_raw)?)?;
    let test = build_sequences(&stats.apply(&raw.select(&test_idx))?)?;
    let input = InputShape {
        steps: stats.steps(),
        features: stats.feature_width(),
    };
    Ok(Dataset {
        schema: raw.schema,
        stats,
        train,
        test,
        input,
    })
}
