//! Dataset schema files.
//!
//! Plain `key = value` lines; `#` starts a comment. Recognized keys:
//!
//! ```text
//! name = credit_card_default
//! positive_label = 1
//! id = ID                      # optional; row numbers otherwise
//! delimiter = ,                # one byte; `tab` and `semicolon` also accepted
//! scale = zscore               # or `none`
//! adapter = none               # or `transactions`, see below
//! column.LIMIT_BAL = numeric
//! column.SEX = categorical
//! column.PAY_0 = sequence(pay_status, 0)
//! column.default = label
//! column.notes = drop
//! ```
//!
//! With `adapter = transactions` the file describes a transaction log instead
//! and the `transactions.*` keys name its columns; see
//! [`crate::transactions`].

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{DataError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Role {
    Numeric,
    Categorical,
    Label,
    Drop,
    /// One time step of a grouped numeric feature family.
    Sequence { family: String, step: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scale {
    #[default]
    ZScore,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransactionsSpec {
    pub customer: String,
    pub timestamp: String,
    pub timestamp_format: String,
    pub quantity: String,
    pub price: String,
    pub steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum Adapter {
    #[default]
    None,
    Transactions(TransactionsSpec),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSchema {
    pub name: String,
    pub columns: Vec<(String, Role)>,
    pub positive_label: String,
    pub id: Option<String>,
    pub delimiter: u8,
    pub scale: Scale,
    pub adapter: Adapter,
}

/// Step columns of one grouped family, ordered by step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Family {
    pub name: String,
    pub columns: Vec<String>,
}

fn parse_role(text: &str) -> Result<Role> {
    let t = text.trim();
    Ok(match t {
        "numeric" => Role::Numeric,
        "categorical" => Role::Categorical,
        "label" => Role::Label,
        "drop" => Role::Drop,
        _ => {
            let inner = t
                .strip_prefix("sequence(")
                .and_then(|s| s.strip_suffix(')'))
                .ok_or_else(|| DataError::Schema(format!("unknown column role '{t}'")))?;
            let (family, step) = inner
                .split_once(',')
                .ok_or_else(|| DataError::Schema(format!("expected sequence(<family>, <step>), got '{t}'")))?;
            let step = step
                .trim()
                .parse()
                .map_err(|_| DataError::Schema(format!("bad step index in '{t}'")))?;
            let family = family.trim();
            if family.is_empty() {
                return Err(DataError::Schema(format!("empty family name in '{t}'")));
            }
            Role::Sequence {
                family: family.to_string(),
                step,
            }
        }
    })
}

/// A `#` starts a comment at line start or after whitespace.
pub(crate) fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

fn parse_delimiter(v: &str) -> Result<u8> {
    match v {
        "tab" | "\\t" => Ok(b'\t'),
        "semicolon" => Ok(b';'),
        "comma" => Ok(b','),
        _ if v.len() == 1 => Ok(v.as_bytes()[0]),
        _ => Err(DataError::Schema(format!("delimiter must be a single byte, got '{v}'"))),
    }
}

impl DatasetSchema {
    pub fn parse(text: &str) -> Result<Self> {
        let mut name = None;
        let mut positive_label = None;
        let mut id = None;
        let mut delimiter = b',';
        let mut scale = Scale::ZScore;
        let mut adapter_kind = "none".to_string();
        let mut tx: BTreeMap<String, String> = BTreeMap::new();
        let mut columns: Vec<(String, Role)> = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| DataError::Schema(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(col) = key.strip_prefix("column.") {
                if columns.iter().any(|(c, _)| c == col) {
                    return Err(DataError::Schema(format!("column '{col}' declared twice")));
                }
                columns.push((col.to_string(), parse_role(value)?));
                continue;
            }
            if let Some(k) = key.strip_prefix("transactions.") {
                tx.insert(k.to_string(), value.to_string());
                continue;
            }
            match key {
                "name" => name = Some(value.to_string()),
                "positive_label" => positive_label = Some(value.to_string()),
                "id" => id = Some(value.to_string()),
                "delimiter" => delimiter = parse_delimiter(value)?,
                "scale" => {
                    scale = match value {
                        "zscore" => Scale::ZScore,
                        "none" => Scale::None,
                        _ => return Err(DataError::Schema(format!("unknown scale '{value}'"))),
                    }
                }
                "adapter" => adapter_kind = value.to_string(),
                _ => return Err(DataError::Schema(format!("line {}: unknown key '{key}'", lineno + 1))),
            }
        }

        let adapter = match adapter_kind.as_str() {
            "none" => {
                if !tx.is_empty() {
                    return Err(DataError::Schema("transactions.* keys need adapter = transactions".into()));
                }
                Adapter::None
            }
            "transactions" => Adapter::Transactions(TransactionsSpec::from_keys(tx)?),
            other => return Err(DataError::Schema(format!("unknown adapter '{other}'"))),
        };
        let schema = DatasetSchema {
            name: name.ok_or_else(|| DataError::Schema("missing 'name'".into()))?,
            columns,
            positive_label: positive_label.unwrap_or_else(|| "1".to_string()),
            id,
            delimiter,
            scale,
            adapter,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.adapter, Adapter::Transactions(_)) {
            return Ok(());
        }
        let labels = self.columns.iter().filter(|(_, r)| *r == Role::Label).count();
        if labels != 1 {
            return Err(DataError::Schema(format!(
                "{}: exactly one label column required, found {labels}",
                self.name
            )));
        }
        let features = self
            .columns
            .iter()
            .filter(|(_, r)| !matches!(r, Role::Label | Role::Drop))
            .count();
        if features == 0 {
            return Err(DataError::Schema(format!("{}: no feature columns", self.name)));
        }
        self.families().map(|_| ())
    }

    /// Grouped families in order of first appearance. Each family must cover
    /// steps `0..T` exactly once, with the same `T` for every family.
    pub fn families(&self) -> Result<Vec<Family>> {
        let mut order: Vec<String> = Vec::new();
        let mut steps: BTreeMap<String, BTreeMap<usize, String>> = BTreeMap::new();
        for (col, role) in &self.columns {
            if let Role::Sequence { family, step } = role {
                if !steps.contains_key(family) {
                    order.push(family.clone());
                }
                let slots = steps.entry(family.clone()).or_default();
                if slots.insert(*step, col.clone()).is_some() {
                    return Err(DataError::Schema(format!(
                        "family '{family}' has step {step} twice"
                    )));
                }
            }
        }
        let mut arity = None;
        let mut out = Vec::with_capacity(order.len());
        for family in order {
            let slots = &steps[&family];
            let t = slots.len();
            if slots.keys().copied().ne(0..t) {
                return Err(DataError::Schema(format!(
                    "family '{family}' steps must cover 0..{t} contiguously"
                )));
            }
            match arity {
                None => arity = Some(t),
                Some(a) if a != t => {
                    return Err(DataError::Schema(format!(
                        "inconsistent group arity: family '{family}' has {t} steps, expected {a}"
                    )))
                }
                _ => {}
            }
            out.push(Family {
                name: family,
                columns: slots.values().cloned().collect(),
            });
        }
        Ok(out)
    }

    /// Sequence length: the family arity, or 1 for ungrouped schemas.
    pub fn steps(&self) -> Result<usize> {
        if let Adapter::Transactions(tx) = &self.adapter {
            return Ok(tx.steps);
        }
        Ok(self.families()?.first().map_or(1, |f| f.columns.len()))
    }

    pub fn label_column(&self) -> Option<&str> {
        self.columns
            .iter()
            .find(|(_, r)| *r == Role::Label)
            .map(|(c, _)| c.as_str())
    }

    /// Renders the schema back to its file format.
    pub fn to_text(&self) -> String {
        let mut s = format!("name = {}\npositive_label = {}\n", self.name, self.positive_label);
        if let Some(id) = &self.id {
            s += &format!("id = {id}\n");
        }
        let delim = match self.delimiter {
            b'\t' => "tab".to_string(),
            b';' => "semicolon".to_string(),
            b => (b as char).to_string(),
        };
        s += &format!("delimiter = {delim}\n");
        s += match self.scale {
            Scale::ZScore => "scale = zscore\n",
            Scale::None => "scale = none\n",
        };
        if let Adapter::Transactions(tx) = &self.adapter {
            s += "adapter = transactions\n";
            s += &format!(
                "transactions.customer = {}\ntransactions.timestamp = {}\ntransactions.timestamp_format = {}\ntransactions.quantity = {}\ntransactions.price = {}\ntransactions.steps = {}\n",
                tx.customer, tx.timestamp, tx.timestamp_format, tx.quantity, tx.price, tx.steps
            );
        }
        for (col, role) in &self.columns {
            let r = match role {
                Role::Numeric => "numeric".to_string(),
                Role::Categorical => "categorical".to_string(),
                Role::Label => "label".to_string(),
                Role::Drop => "drop".to_string(),
                Role::Sequence { family, step } => format!("sequence({family}, {step})"),
            };
            s += &format!("column.{col} = {r}\n");
        }
        s
    }
}

impl TransactionsSpec {
    fn from_keys(mut keys: BTreeMap<String, String>) -> Result<Self> {
        let mut take = |k: &str| {
            keys.remove(k)
                .ok_or_else(|| DataError::Schema(format!("missing transactions.{k}")))
        };
        let spec = TransactionsSpec {
            customer: take("customer")?,
            timestamp: take("timestamp")?,
            timestamp_format: take("timestamp_format")?,
            quantity: take("quantity")?,
            price: take("price")?,
            steps: match keys.remove("steps") {
                Some(s) => s
                    .parse()
                    .map_err(|_| DataError::Schema(format!("transactions.steps: bad integer '{s}'")))?,
                None => 6,
            },
        };
        if let Some(k) = keys.keys().next() {
            return Err(DataError::Schema(format!("unknown key 'transactions.{k}'")));
        }
        if spec.steps == 0 {
            return Err(DataError::Schema("transactions.steps must be positive".into()));
        }
        Ok(spec)
    }
}
