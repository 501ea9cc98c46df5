//! Turns a transaction log into per-customer sequences.
//!
//! The observed time span is cut into `steps + 1` equal windows. Windows
//! `0..steps` become the sequence, with the line count and total amount
//! (`quantity · price`) per window as the feature families `count` and
//! `amount`. The label is 1 when a customer has no transactions in the final
//! window. Customers seen only in the final window have no history and are
//! dropped.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDateTime;

use crate::error::{DataError, Result};
use crate::schema::{DatasetSchema, Role, TransactionsSpec};
use crate::table::{ColumnValues, RawColumn, RawTable};

struct Line {
    customer: String,
    at: NaiveDateTime,
    amount: f64,
}

pub(crate) fn load(path: &Path, schema: &DatasetSchema, spec: &TransactionsSpec) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .from_path(path)
        .map_err(|e| DataError::csv(path, e))?;
    let headers = reader.headers().map_err(|e| DataError::csv(path, e))?.clone();
    let pos = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
    };
    let (c_cust, c_time, c_qty, c_price) = (
        pos(&spec.customer)?,
        pos(&spec.timestamp)?,
        pos(&spec.quantity)?,
        pos(&spec.price)?,
    );

    let mut lines = Vec::new();
    let mut skipped = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| DataError::csv(path, e))?;
        let customer = record[c_cust].trim();
        let at = NaiveDateTime::parse_from_str(record[c_time].trim(), &spec.timestamp_format);
        let qty = record[c_qty].trim().parse::<f64>();
        let price = record[c_price].trim().parse::<f64>();
        match (customer.is_empty(), at, qty, price) {
            (false, Ok(at), Ok(q), Ok(p)) if (q * p).is_finite() => lines.push(Line {
                customer: customer.to_string(),
                at,
                amount: q * p,
            }),
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} unparseable transaction lines", path.display());
    }
    let (Some(start), Some(end)) = (
        lines.iter().map(|l| l.at).min(),
        lines.iter().map(|l| l.at).max(),
    ) else {
        return Err(DataError::NoRows {
            path: path.to_path_buf(),
            dropped: skipped,
        });
    };
    let windows = spec.steps + 1;
    let span = (end - start).num_milliseconds().max(1) as f64;
    let window_of = |at: NaiveDateTime| -> usize {
        let frac = (at - start).num_milliseconds() as f64 / span;
        ((frac * windows as f64) as usize).min(windows - 1)
    };

    let mut per_customer: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for l in &lines {
        let w = window_of(l.at);
        let slots = per_customer
            .entry(l.customer.clone())
            .or_insert_with(|| vec![(0.0, 0.0); windows]);
        slots[w].0 += 1.0;
        slots[w].1 += l.amount;
    }

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut counts = vec![Vec::new(); spec.steps];
    let mut amounts = vec![Vec::new(); spec.steps];
    let mut dropped = 0;
    for (customer, slots) in per_customer {
        if slots[..spec.steps].iter().all(|s| s.0 == 0.0) {
            dropped += 1;
            continue;
        }
        ids.push(customer);
        labels.push(u8::from(slots[spec.steps].0 == 0.0));
        for t in 0..spec.steps {
            counts[t].push(Some(slots[t].0));
            amounts[t].push(Some(slots[t].1));
        }
    }
    if labels.is_empty() {
        return Err(DataError::NoRows {
            path: path.to_path_buf(),
            dropped,
        });
    }
    let mut columns = Vec::new();
    for (family, values) in [("count", counts), ("amount", amounts)] {
        for (t, v) in values.into_iter().enumerate() {
            columns.push(RawColumn {
                name: format!("{family}_t{t}"),
                role: Role::Sequence {
                    family: family.to_string(),
                    step: t,
                },
                values: ColumnValues::Numeric(v),
            });
        }
    }
    Ok(RawTable {
        schema: schema.clone(),
        ids,
        labels,
        columns,
        dropped,
    })
}
