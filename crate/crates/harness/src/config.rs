//! Experiment configuration: `key = value` lines, `#` comments. Every key has
//! a default and unknown keys are errors. See `docs/config.md`.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qrcl_core::ops::PoolMode;
use qrcl_data::SynthKind;

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataSource {
    Synth,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    Qrcnn,
    Cnn,
    Rnn,
    Tcn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    None,
    #[serde(rename = "self")]
    SelfAttention,
    Multihead,
    Cross,
}

/// Which stream supplies the queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Queries from the LSTM states, keys and values from the backbone.
    LstmToQrcnn,
    QrcnnToLstm,
}

/// How the QRCNN block turns a `[T × F]` input into a feature sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QrcnnSequence {
    /// One row per convolution branch, from the whole sequence.
    Branch,
    /// One concatenated branch vector per sliding window position.
    Window,
}

macro_rules! named_enum {
    ($ty:ty { $($name:literal => $v:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($name => Ok($v),)+
                    _ => Err(format!("expected one of: {}", [$($name),+].join(", "))),
                }
            }
        }
        impl Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                $(if *self == $v { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

named_enum!(DataSource { "synth" => DataSource::Synth, "csv" => DataSource::Csv });
named_enum!(Backbone {
    "qrcnn" => Backbone::Qrcnn,
    "cnn" => Backbone::Cnn,
    "rnn" => Backbone::Rnn,
    "tcn" => Backbone::Tcn,
});
named_enum!(AttentionKind {
    "none" => AttentionKind::None,
    "self" => AttentionKind::SelfAttention,
    "multihead" => AttentionKind::Multihead,
    "cross" => AttentionKind::Cross,
});
named_enum!(Direction {
    "lstm_to_qrcnn" => Direction::LstmToQrcnn,
    "qrcnn_to_lstm" => Direction::QrcnnToLstm,
});
named_enum!(QrcnnSequence { "branch" => QrcnnSequence::Branch, "window" => QrcnnSequence::Window });

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub kind: SynthKind,
    pub n: usize,
    pub steps: usize,
    pub features: usize,
    pub schema: Option<PathBuf>,
    pub path: Option<PathBuf>,
    pub train_frac: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub attention: AttentionKind,
    pub direction: Direction,
    pub hidden: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub heads: usize,
    pub channels: usize,
    pub regions: usize,
    pub kernels: Vec<usize>,
    pub pool: PoolMode,
    pub stride: usize,
    pub sequence: QrcnnSequence,
    pub window: usize,
    pub cnn_kernel: usize,
    pub cnn_layers: usize,
    pub tcn_kernel: usize,
    pub tcn_dilations: Vec<usize>,
    pub taus: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Epochs without held-out improvement before stopping; 0 disables.
    pub patience: usize,
    /// Share of the training split held out for early stopping.
    pub val_frac: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub threshold: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub ablate_seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig {
                source: DataSource::Synth,
                kind: SynthKind::Separable,
                n: 1000,
                steps: 6,
                features: 4,
                schema: None,
                path: None,
                train_frac: 0.8,
            },
            model: ModelConfig {
                backbone: Backbone::Qrcnn,
                attention: AttentionKind::Cross,
                direction: Direction::LstmToQrcnn,
                hidden: 32,
                d_k: 16,
                d_v: 16,
                heads: 4,
                channels: 8,
                regions: 2,
                kernels: vec![2, 3, 4, 5],
                pool: PoolMode::Max,
                stride: 1,
                sequence: QrcnnSequence::Branch,
                window: 4,
                cnn_kernel: 3,
                cnn_layers: 2,
                tcn_kernel: 3,
                tcn_dilations: vec![1, 2, 4],
                taus: vec![0.1, 0.5, 0.9],
            },
            train: TrainConfig {
                lr: 0.05,
                momentum: 0.0,
                batch: 32,
                epochs: 30,
                patience: 0,
                val_frac: 0.1,
                lambda: 0.5,
            },
            threshold: 0.5,
            seed: 7,
            out: PathBuf::from("qrcl-out"),
            ablate_seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| HarnessError::Config(format!("{key} = {value}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(|v| parse(key, v.trim()))
        .collect()
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn pool_name(p: PoolMode) -> &'static str {
    match p {
        PoolMode::Max => "max",
        PoolMode::Avg => "avg",
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(head, _)| head).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| HarnessError::Config(format!("line {}: {}", lineno + 1, strip(e))))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("override '{pair}' is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let d = &mut self.data;
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "model" => match v {
                "qrcnn_lstm_cross" => {
                    m.backbone = Backbone::Qrcnn;
                    m.attention = AttentionKind::Cross;
                }
                _ => return Err(HarnessError::Config(format!("model = {v}: expected qrcnn_lstm_cross"))),
            },
            "data.source" => d.source = parse(key, v)?,
            "data.kind" => d.kind = parse(key, v)?,
            "data.n" => d.n = parse(key, v)?,
            "data.steps" => d.steps = parse(key, v)?,
            "data.features" => d.features = parse(key, v)?,
            "data.schema" => d.schema = Some(PathBuf::from(v)),
            "data.path" => d.path = Some(PathBuf::from(v)),
            "data.train_frac" => d.train_frac = parse(key, v)?,
            "model.backbone" => m.backbone = parse(key, v)?,
            "model.attention" => m.attention = parse(key, v)?,
            "model.hidden" => m.hidden = parse(key, v)?,
            "attention.direction" => m.direction = parse(key, v)?,
            "attention.d_k" => m.d_k = parse(key, v)?,
            "attention.d_v" => m.d_v = parse(key, v)?,
            "attention.heads" => m.heads = parse(key, v)?,
            "qrcnn.channels" => m.channels = parse(key, v)?,
            "qrcnn.regions" => m.regions = parse(key, v)?,
            "qrcnn.kernels" => m.kernels = parse_list(key, v)?,
            "qrcnn.pool" => {
                m.pool = match v {
                    "max" => PoolMode::Max,
                    "avg" => PoolMode::Avg,
                    _ => return Err(HarnessError::Config(format!("{key} = {v}: expected max or avg"))),
                }
            }
            "qrcnn.stride" => m.stride = parse(key, v)?,
            "qrcnn.sequence" => m.sequence = parse(key, v)?,
            "qrcnn.window" => m.window = parse(key, v)?,
            "cnn.kernel" => m.cnn_kernel = parse(key, v)?,
            "cnn.layers" => m.cnn_layers = parse(key, v)?,
            "tcn.kernel" => m.tcn_kernel = parse(key, v)?,
            "tcn.dilations" => m.tcn_dilations = parse_list(key, v)?,
            "loss.taus" => m.taus = parse_list(key, v)?,
            "loss.lambda" => t.lambda = parse(key, v)?,
            "train.lr" => t.lr = parse(key, v)?,
            "train.momentum" => t.momentum = parse(key, v)?,
            "train.batch" => t.batch = parse(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.patience" => t.patience = parse(key, v)?,
            "train.val_frac" => t.val_frac = parse(key, v)?,
            "eval.threshold" => self.threshold = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "ablate.seeds" => self.ablate_seeds = parse_list(key, v)?,
            _ => return Err(HarnessError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Every key with its current value, in documentation order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (d, m, t) = (&self.data, &self.model, &self.train);
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut e = vec![
            ("data.source", d.source.to_string()),
            ("data.kind", d.kind.name().to_string()),
            ("data.n", d.n.to_string()),
            ("data.steps", d.steps.to_string()),
            ("data.features", d.features.to_string()),
        ];
        if let Some(s) = path(&d.schema) {
            e.push(("data.schema", s));
        }
        if let Some(p) = path(&d.path) {
            e.push(("data.path", p));
        }
        e.extend([
            ("data.train_frac", d.train_frac.to_string()),
            ("model.backbone", m.backbone.to_string()),
            ("model.attention", m.attention.to_string()),
            ("model.hidden", m.hidden.to_string()),
            ("attention.direction", m.direction.to_string()),
            ("attention.d_k", m.d_k.to_string()),
            ("attention.d_v", m.d_v.to_string()),
            ("attention.heads", m.heads.to_string()),
            ("qrcnn.channels", m.channels.to_string()),
            ("qrcnn.regions", m.regions.to_string()),
            ("qrcnn.kernels", join(&m.kernels)),
            ("qrcnn.pool", pool_name(m.pool).to_string()),
            ("qrcnn.stride", m.stride.to_string()),
            ("qrcnn.sequence", m.sequence.to_string()),
            ("qrcnn.window", m.window.to_string()),
            ("cnn.kernel", m.cnn_kernel.to_string()),
            ("cnn.layers", m.cnn_layers.to_string()),
            ("tcn.kernel", m.tcn_kernel.to_string()),
            ("tcn.dilations", join(&m.tcn_dilations)),
            ("loss.taus", join(&m.taus)),
            ("loss.lambda", t.lambda.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.momentum", t.momentum.to_string()),
            ("train.batch", t.batch.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.patience", t.patience.to_string()),
            ("train.val_frac", t.val_frac.to_string()),
            ("eval.threshold", self.threshold.to_string()),
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("ablate.seeds", join(&self.ablate_seeds)),
        ]);
        e
    }

    /// Snapshot that [`ExperimentConfig::parse`] reads back to an equal value.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        let (d, m, t) = (&self.data, &self.model, &self.train);
        if d.source == DataSource::Csv && (d.schema.is_none() || d.path.is_none()) {
            return bad("data.source = csv needs data.schema and data.path".into());
        }
        if !(d.train_frac > 0.0 && d.train_frac < 1.0) {
            return bad(format!("data.train_frac must lie in (0, 1), got {}", d.train_frac));
        }
        if m.hidden == 0 || m.d_k == 0 || m.d_v == 0 || m.heads == 0 {
            return bad("model.hidden, attention.d_k, attention.d_v and attention.heads must be positive".into());
        }
        if m.attention == AttentionKind::Multihead && (!m.d_k.is_multiple_of(m.heads) || !m.d_v.is_multiple_of(m.heads)) {
            return bad(format!(
                "attention: d_k = {} and d_v = {} must be divisible by heads = {}",
                m.d_k, m.d_v, m.heads
            ));
        }
        if m.kernels.len() != 4 || m.kernels.contains(&0) {
            return bad(format!("qrcnn.kernels needs four positive widths, got {:?}", m.kernels));
        }
        if m.channels == 0 || m.regions == 0 || m.stride == 0 || m.window == 0 {
            return bad("qrcnn.channels, regions, stride and window must be positive".into());
        }
        if m.cnn_kernel == 0 || m.cnn_layers == 0 || m.tcn_kernel == 0 || m.tcn_dilations.is_empty() {
            return bad("cnn and tcn sizes must be positive".into());
        }
        qrcl_core::qrcnn::validate_taus(&m.taus).map_err(|e| HarnessError::Config(strip(e.into())))?;
        if !(0.0..=1.0).contains(&t.lambda) {
            return bad(format!("loss.lambda must lie in [0, 1], got {}", t.lambda));
        }
        if !(t.lr >= 0.0 && t.lr.is_finite()) {
            return bad(format!("train.lr must be a finite nonnegative number, got {}", t.lr));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return bad(format!("train.momentum must lie in [0, 1), got {}", t.momentum));
        }
        if t.batch == 0 {
            return bad("train.batch must be positive".into());
        }
        if t.patience > 0 && !(t.val_frac > 0.0 && t.val_frac < 1.0) {
            return bad(format!("train.val_frac must lie in (0, 1), got {}", t.val_frac));
        }
        if !self.threshold.is_finite() {
            return bad("eval.threshold must be finite".into());
        }
        if self.ablate_seeds.is_empty() {
            return bad("ablate.seeds must list at least one seed".into());
        }
        Ok(())
    }
}

fn strip(e: HarnessError) -> String {
    match e {
        HarnessError::Config(s) => s,
        HarnessError::Model(qrcl_core::Error::Config(s)) => s,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn overrides_and_comments() {
        let cfg = ExperimentConfig::parse(
            "# comment\nmodel.backbone = tcn   # trailing\nloss.taus = 0.25, 0.5,0.75\ntrain.epochs = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.model.backbone, Backbone::Tcn);
        assert_eq!(cfg.model.taus, [0.25, 0.5, 0.75]);
        assert_eq!(cfg.train.epochs, 3);
    }

    #[test]
    fn unknown_keys_are_fatal() {
        let err = ExperimentConfig::parse("train.lr = 0.1\ntrain.lrr = 0.2\n").unwrap_err();
        assert!(err.to_string().contains("line 2") && err.to_string().contains("train.lrr"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("model.attention", "multihead").unwrap();
        cfg.set("attention.heads", "3").unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.set("data.source", "csv").unwrap();
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::default().set("model.backbone", "lstm").is_err());
    }
}
