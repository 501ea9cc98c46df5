//! Typed tables read from CSV.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{DataError, Result};
use crate::schema::{Adapter, DatasetSchema, Role};

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnValues {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl ColumnValues {
    fn len(&self) -> usize {
        match self {
            ColumnValues::Numeric(v) => v.len(),
            ColumnValues::Categorical(v) => v.len(),
        }
    }

    fn select(&self, rows: &[usize]) -> Self {
        match self {
            ColumnValues::Numeric(v) => ColumnValues::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnValues::Categorical(v) => {
                ColumnValues::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawColumn {
    pub name: String,
    pub role: Role,
    pub values: ColumnValues,
}

/// Feature columns in schema order plus labels and row ids. Missing cells are
/// `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub schema: DatasetSchema,
    pub ids: Vec<String>,
    pub labels: Vec<u8>,
    pub columns: Vec<RawColumn>,
    /// Rows discarded at load time (blank label, or no usable history for
    /// adapted logs).
    pub dropped: usize,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&RawColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Rows `rows` in that order.
    pub fn select(&self, rows: &[usize]) -> RawTable {
        RawTable {
            schema: self.schema.clone(),
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| RawColumn {
                    name: c.name.clone(),
                    role: c.role.clone(),
                    values: c.values.select(rows),
                })
                .collect(),
            dropped: 0,
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        let n = self.labels.len();
        if self.ids.len() != n || self.columns.iter().any(|c| c.values.len() != n) {
            return Err(DataError::Invalid("table columns have unequal lengths".into()));
        }
        Ok(())
    }
}

fn parse_numeric(cell: &str) -> Option<f64> {
    let t = cell.trim();
    if t.is_empty() {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_text(cell: &str) -> Option<String> {
    let t = cell.trim();
    (!t.is_empty()).then(|| t.to_string())
}

/// Reads `path` according to `schema`. Header matching is by name; columns
/// the schema does not mention are ignored with a warning. Non-numeric text
/// in a numeric column counts as missing.
pub fn load_csv(path: &Path, schema: &DatasetSchema) -> Result<RawTable> {
    load(path, schema, true)
}

/// Like [`load_csv`] for scoring input: the label column may be absent and
/// is ignored, every row is kept and `labels` are all 0. A transactions
/// adapter derives labels as usual.
pub fn load_unlabeled(path: &Path, schema: &DatasetSchema) -> Result<RawTable> {
    load(path, schema, false)
}

fn load(path: &Path, schema: &DatasetSchema, labeled: bool) -> Result<RawTable> {
    if let Adapter::Transactions(spec) = &schema.adapter {
        return crate::transactions::load(path, schema, spec);
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .flexible(false)
        .from_path(path)
        .map_err(|e| DataError::csv(path, e))?;
    let headers = reader.headers().map_err(|e| DataError::csv(path, e))?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();

    let pos = |name: &str| {
        index.get(name).copied().ok_or_else(|| DataError::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
    };
    let label_name = schema.label_column().expect("validated schema has a label");
    let label_col = if labeled { Some(pos(label_name)?) } else { None };
    let id_col = schema.id.as_deref().map(pos).transpose()?;
    let mut features = Vec::new();
    for (name, role) in &schema.columns {
        if !labeled && matches!(role, Role::Label) {
            continue;
        }
        let p = pos(name)?;
        if !matches!(role, Role::Label | Role::Drop) {
            features.push((p, name.clone(), role.clone()));
        }
    }
    let known: Vec<&str> = schema
        .columns
        .iter()
        .map(|(c, _)| c.as_str())
        .chain(schema.id.as_deref())
        .collect();
    let extra: Vec<&str> = headers.iter().map(str::trim).filter(|h| !known.contains(h)).collect();
    if !extra.is_empty() {
        log::warn!("{}: ignoring columns not in schema: {}", path.display(), extra.join(", "));
    }

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut columns: Vec<ColumnValues> = features
        .iter()
        .map(|(_, _, role)| match role {
            Role::Categorical => ColumnValues::Categorical(Vec::new()),
            _ => ColumnValues::Numeric(Vec::new()),
        })
        .collect();
    let mut dropped = 0;
    let mut bad_numeric = 0usize;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::csv(path, e))?;
        match label_col {
            Some(c) => {
                let label = record[c].trim();
                if label.is_empty() {
                    dropped += 1;
                    continue;
                }
                labels.push(u8::from(label == schema.positive_label));
            }
            None => labels.push(0),
        }
        ids.push(match id_col {
            Some(c) => record[c].trim().to_string(),
            None => (row + 1).to_string(),
        });
        for ((p, _, _), col) in features.iter().zip(columns.iter_mut()) {
            let cell = &record[*p];
            match col {
                ColumnValues::Numeric(v) => {
                    let parsed = parse_numeric(cell);
                    if parsed.is_none() && !cell.trim().is_empty() {
                        bad_numeric += 1;
                    }
                    v.push(parsed);
                }
                ColumnValues::Categorical(v) => v.push(parse_text(cell)),
            }
        }
    }
    if bad_numeric > 0 {
        log::warn!("{}: {bad_numeric} non-numeric cells treated as missing", path.display());
    }
    if dropped > 0 {
        log::info!("{}: dropped {dropped} rows with blank labels", path.display());
    }
    if labels.is_empty() {
        return Err(DataError::NoRows {
            path: path.to_path_buf(),
            dropped,
        });
    }
    Ok(RawTable {
        schema: schema.clone(),
        ids,
        labels,
        columns: features
            .into_iter()
            .zip(columns)
            .map(|((_, name, role), values)| RawColumn { name, role, values })
            .collect(),
        dropped,
    })
}
