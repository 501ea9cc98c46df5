//! Train-fitted normalization and encoding.
//!
//! [`fit`] reads a [`RawTable`] and [`PreprocessStats::apply`] turns a
//! `RawTable` into an [`EncodedTable`]. Encoded tables cannot be fed back
//! into `apply`, so double application is rejected at compile time:
//!
//! ```compile_fail
//! # fn f(stats: &qrcl_data::PreprocessStats, raw: &qrcl_data::RawTable) {
//! let once = stats.apply(raw).unwrap();
//! let twice = stats.apply(&once); // EncodedTable is not a RawTable
//! # }
//! ```

use crate::error::{DataError, Result};
use crate::schema::{DatasetSchema, Role, Scale};
use crate::table::{ColumnValues, RawTable};

/// Relative spread below which a column counts as constant.
const CONSTANT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct NumericStats {
    pub column: String,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// The fit data had missing cells, so a 0/1 indicator feature follows.
    pub flag: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalStats {
    pub column: String,
    /// Sorted distinct values seen in the fit data; slot `values.len()` is
    /// the unseen/missing slot.
    pub values: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StaticStats {
    Numeric(NumericStats),
    Categorical(CategoricalStats),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyStats {
    pub name: String,
    /// One entry per step, in step order.
    pub steps: Vec<NumericStats>,
    /// Any step column had missing cells; one indicator per step follows.
    pub flag: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessStats {
    pub fitted_on: usize,
    pub scale: Scale,
    pub statics: Vec<StaticStats>,
    pub families: Vec<FamilyStats>,
    pub dropped_columns: Vec<String>,
}

/// Dense features after preprocessing. Step features for sample `i` at step
/// `t` are `step_rows[i][t * step_names.len()..][..step_names.len()]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTable {
    pub ids: Vec<String>,
    pub labels: Vec<u8>,
    pub steps: usize,
    pub static_names: Vec<String>,
    pub static_rows: Vec<Vec<f64>>,
    pub step_names: Vec<String>,
    pub step_rows: Vec<Vec<f64>>,
}

impl EncodedTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn moments(values: &[Option<f64>]) -> Option<(f64, f64, bool)> {
    let observed: Vec<f64> = values.iter().flatten().copied().collect();
    if observed.is_empty() {
        return None;
    }
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let var = observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt(), observed.len() < values.len()))
}

fn numeric_stats(column: &str, values: &[Option<f64>], scale: Scale) -> Option<NumericStats> {
    let Some((mean, std, missing)) = moments(values) else {
        log::warn!("column '{column}' has no observed values in the fit data; dropped");
        return None;
    };
    if scale == Scale::ZScore && std <= CONSTANT_TOL * mean.abs().max(1.0) {
        log::warn!("column '{column}' is constant in the fit data; dropped");
        return None;
    }
    Some(NumericStats {
        column: column.to_string(),
        mean,
        std,
        flag: missing,
    })
}

impl NumericStats {
    fn transform(&self, v: Option<f64>, scale: Scale) -> f64 {
        let v = v.unwrap_or(self.mean);
        match scale {
            Scale::ZScore => (v - self.mean) / self.std,
            Scale::None => v,
        }
    }
}

fn numeric<'a>(raw: &'a RawTable, name: &str) -> Result<&'a [Option<f64>]> {
    match raw.column(name).map(|c| &c.values) {
        Some(ColumnValues::Numeric(v)) => Ok(v),
        Some(_) => Err(DataError::Invalid(format!("column '{name}' is not numeric"))),
        None => Err(DataError::Invalid(format!("table has no column '{name}'"))),
    }
}

fn categorical<'a>(raw: &'a RawTable, name: &str) -> Result<&'a [Option<String>]> {
    match raw.column(name).map(|c| &c.values) {
        Some(ColumnValues::Categorical(v)) => Ok(v),
        Some(_) => Err(DataError::Invalid(format!("column '{name}' is not categorical"))),
        None => Err(DataError::Invalid(format!("table has no column '{name}'"))),
    }
}

/// Fits normalization and encodings on `raw`, which should be the training
/// split only.
pub fn fit(raw: &RawTable) -> Result<PreprocessStats> {
    raw.check()?;
    if raw.is_empty() {
        return Err(DataError::Invalid("cannot fit preprocessing on zero rows".into()));
    }
    let schema: &DatasetSchema = &raw.schema;
    let scale = schema.scale;
    let mut dropped_columns = Vec::new();
    let mut statics = Vec::new();
    for col in &raw.columns {
        match &col.role {
            Role::Numeric => match numeric_stats(&col.name, numeric(raw, &col.name)?, scale) {
                Some(s) => statics.push(StaticStats::Numeric(s)),
                None => dropped_columns.push(col.name.clone()),
            },
            Role::Categorical => {
                let mut values: Vec<String> = categorical(raw, &col.name)?.iter().flatten().cloned().collect();
                values.sort();
                values.dedup();
                statics.push(StaticStats::Categorical(CategoricalStats {
                    column: col.name.clone(),
                    values,
                }));
            }
            _ => {}
        }
    }
    let mut families = Vec::new();
    for family in raw_families(raw)? {
        let steps: Vec<Option<NumericStats>> = family
            .columns
            .iter()
            .map(|c| Ok(numeric_stats(c, numeric(raw, c)?, scale)))
            .collect::<Result<_>>()?;
        if steps.iter().any(Option::is_none) {
            log::warn!("family '{}' dropped: a step column is unusable", family.name);
            dropped_columns.extend(family.columns.iter().cloned());
            continue;
        }
        let steps: Vec<NumericStats> = steps.into_iter().flatten().collect();
        let flag = steps.iter().any(|s| s.flag);
        families.push(FamilyStats {
            name: family.name,
            steps,
            flag,
        });
    }
    if statics.is_empty() && families.is_empty() {
        return Err(DataError::Invalid("every feature column was dropped".into()));
    }
    Ok(PreprocessStats {
        fitted_on: raw.len(),
        scale,
        statics,
        families,
        dropped_columns,
    })
}

fn raw_families(raw: &RawTable) -> Result<Vec<crate::schema::Family>> {
    // adapted tables carry their own sequence columns
    let mut schema = raw.schema.clone();
    schema.columns = raw.columns.iter().map(|c| (c.name.clone(), c.role.clone())).collect();
    schema.families()
}

impl PreprocessStats {
    pub fn steps(&self) -> usize {
        self.families.first().map_or(1, |f| f.steps.len())
    }

    pub fn static_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for s in &self.statics {
            match s {
                StaticStats::Numeric(n) => {
                    names.push(n.column.clone());
                    if n.flag {
                        names.push(format!("{}_missing", n.column));
                    }
                }
                StaticStats::Categorical(c) => {
                    names.extend(c.values.iter().map(|v| format!("{}={v}", c.column)));
                    names.push(format!("{}=<unseen>", c.column));
                }
            }
        }
        names
    }

    pub fn step_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for f in &self.families {
            names.push(f.name.clone());
            if f.flag {
                names.push(format!("{}_missing", f.name));
            }
        }
        names
    }

    /// Per-step feature width `F = step features + static features`.
    pub fn feature_width(&self) -> usize {
        self.static_names().len() + self.step_names().len()
    }

    pub fn apply(&self, raw: &RawTable) -> Result<EncodedTable> {
        raw.check()?;
        let n = raw.len();
        let mut static_rows = vec![Vec::new(); n];
        for s in &self.statics {
            match s {
                StaticStats::Numeric(st) => {
                    let col = numeric(raw, &st.column)?;
                    for (row, v) in static_rows.iter_mut().zip(col) {
                        row.push(st.transform(*v, self.scale));
                        if st.flag {
                            row.push(if v.is_none() { 1.0 } else { 0.0 });
                        }
                    }
                }
                StaticStats::Categorical(st) => {
                    let col = categorical(raw, &st.column)?;
                    let width = st.values.len() + 1;
                    for (row, v) in static_rows.iter_mut().zip(col) {
                        let slot = v
                            .as_ref()
                            .and_then(|v| st.values.binary_search(v).ok())
                            .unwrap_or(st.values.len());
                        let start = row.len();
                        row.resize(start + width, 0.0);
                        row[start + slot] = 1.0;
                    }
                }
            }
        }
        let steps = self.steps();
        let mut step_rows = vec![Vec::new(); n];
        if !self.families.is_empty() {
            let cols: Vec<Vec<&[Option<f64>]>> = self
                .families
                .iter()
                .map(|f| f.steps.iter().map(|s| numeric(raw, &s.column)).collect())
                .collect::<Result<_>>()?;
            for (i, row) in step_rows.iter_mut().enumerate() {
                for t in 0..steps {
                    for (f, fam) in self.families.iter().enumerate() {
                        let v = cols[f][t][i];
                        row.push(fam.steps[t].transform(v, self.scale));
                        if fam.flag {
                            row.push(if v.is_none() { 1.0 } else { 0.0 });
                        }
                    }
                }
            }
        }
        Ok(EncodedTable {
            ids: raw.ids.clone(),
            labels: raw.labels.clone(),
            steps,
            static_names: self.static_names(),
            static_rows,
            step_names: self.step_names(),
            step_rows,
        })
    }
}
