//! Binary checkpoints. Layout (all integers and floats little-endian):
//!
//! ```text
//! "QRCL" | u32 version
//! u32 tensor count | per tensor: u32 name length, name bytes, u32 ndim, u64 dims…
//! payload: every tensor's f64 values in manifest order
//! u32 length + config text | u32 length + JSON metadata
//! ```
//!
//! Tensors are the model parameters followed, when momentum is in use, by
//! `velocity/<name>` buffers. See `docs/checkpoint.md`.

use std::path::{Path, PathBuf};

use qrcl_core::optim::Sgd;
use qrcl_core::Tensor64;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::model::{InputShape, Model};
use crate::report::MetricsReport;
use crate::train::{EarlyStop, TrainState};

pub const MAGIC: &[u8; 4] = b"QRCL";
pub const VERSION: u32 = 1;
const VELOCITY: &str = "velocity/";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Metadata {
    input: InputShape,
    epochs_completed: usize,
    loss_trace: Vec<f64>,
    val_trace: Vec<f64>,
    early: EarlyStop,
    training_time_s: f64,
    report: Option<MetricsReport>,
}

/// A decoded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub state: TrainState,
    pub report: Option<MetricsReport>,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&u32::try_from(v).expect("checkpoint field fits u32").to_le_bytes());
}

fn put_bytes(buf: &mut Vec<u8>, b: &[u8]) {
    put_u32(buf, b.len());
    buf.extend_from_slice(b);
}

/// Serializes `state` with its config and optional final report.
pub fn encode(cfg: &ExperimentConfig, state: &TrainState, report: Option<&MetricsReport>) -> Vec<u8> {
    let store = &state.model.store;
    let mut tensors: Vec<(String, &Tensor64)> = store.iter().map(|(n, t)| (n.to_string(), t)).collect();
    let names: Vec<String> = tensors.iter().map(|(n, _)| n.clone()).collect();
    for (name, v) in names.iter().zip(state.optimizer.velocity()) {
        tensors.push((format!("{VELOCITY}{name}"), v));
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut buf, tensors.len());
    for (name, t) in &tensors {
        put_bytes(&mut buf, name.as_bytes());
        put_u32(&mut buf, t.shape().len());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, t) in &tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    put_bytes(&mut buf, cfg.to_text().as_bytes());
    let meta = Metadata {
        input: state.model.input,
        epochs_completed: state.epochs_completed,
        loss_trace: state.loss_trace.clone(),
        val_trace: state.val_trace.clone(),
        early: state.early.clone(),
        training_time_s: state.training_time_s,
        report: report.cloned(),
    };
    put_bytes(&mut buf, serde_json::to_string(&meta).expect("metadata serializes").as_bytes());
    buf
}

pub fn save(path: &Path, cfg: &ExperimentConfig, state: &TrainState, report: Option<&MetricsReport>) -> Result<()> {
    crate::report::write_bytes(path, &encode(cfg, state, report))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: String) -> HarnessError {
        HarnessError::Checkpoint {
            path: self.path.to_path_buf(),
            reason,
        }
    }

    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            self.fail(format!(
                "corrupt payload: file truncated while reading {field} (need {n} bytes at offset {}, file has {})",
                self.pos,
                self.buf.len()
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<usize> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        let b = self.take(8, field)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn text(&mut self, field: &str) -> Result<&'a str> {
        let n = self.u32(field)?;
        let b = self.take(n, field)?;
        std::str::from_utf8(b).map_err(|_| self.fail(format!("{field} is not valid UTF-8")))
    }
}

/// Parses a checkpoint, rebuilding the model from its config snapshot and
/// checking the manifest against it.
pub fn decode(buf: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.fail("bad magic (not a QRCL checkpoint)".into()));
    }
    let version = r.u32("version")? as u32;
    if version != VERSION {
        return Err(r.fail(format!("unsupported version {version} (expected {VERSION})")));
    }
    let count = r.u32("tensor count")?;
    let mut manifest = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let name = r.text(&format!("manifest[{i}].name"))?.to_string();
        let ndim = r.u32(&format!("manifest[{i}].ndim"))?;
        let dims = (0..ndim)
            .map(|_| r.u64(&format!("manifest[{i}].shape")).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        manifest.push((name, dims));
    }
    let mut tensors = Vec::with_capacity(manifest.len());
    for (name, dims) in &manifest {
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| r.fail(format!("manifest entry {name} has an absurd shape {dims:?}")))?;
        let bytes = r.take(len.saturating_mul(8), &format!("payload of {name}"))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor64::new(dims.clone(), data).map_err(|e| r.fail(format!("payload of {name}: {e}")))?);
    }
    let config_text = r.text("config")?;
    let config = ExperimentConfig::parse(config_text).map_err(|e| r.fail(format!("config snapshot: {e}")))?;
    let meta_text = r.text("metadata")?;
    let meta: Metadata = serde_json::from_str(meta_text).map_err(|e| r.fail(format!("metadata: {e}")))?;
    if r.pos != buf.len() {
        return Err(r.fail(format!("corrupt payload: {} trailing bytes", buf.len() - r.pos)));
    }

    let mut model = Model::new(&config.model, meta.input, config.seed)
        .map_err(|e| r.fail(format!("config snapshot does not assemble: {e}")))?;
    let ids: Vec<_> = model.store.ids().collect();
    let velocity_count = manifest.len().checked_sub(ids.len()).filter(|&v| v == 0 || v == ids.len());
    let Some(velocity_count) = velocity_count else {
        return Err(r.fail(format!(
            "tensor count: manifest has {} tensors, model has {} parameters",
            manifest.len(),
            ids.len()
        )));
    };
    let mut tensors = tensors.into_iter();
    for (i, &id) in ids.iter().enumerate() {
        let (name, dims) = &manifest[i];
        let expected = model.store.name(id);
        if name != expected {
            return Err(r.fail(format!("manifest[{i}].name: found {name}, model expects {expected}")));
        }
        if dims.as_slice() != model.store.get(id).shape() {
            return Err(r.fail(format!(
                "manifest[{i}].shape: {name} is {dims:?}, model expects {:?}",
                model.store.get(id).shape()
            )));
        }
        *model.store.get_mut(id) = tensors.next().expect("counted");
    }
    let mut velocity = Vec::with_capacity(velocity_count);
    for (j, &id) in ids.iter().enumerate().take(velocity_count) {
        let i = ids.len() + j;
        let (name, dims) = &manifest[i];
        let expected = format!("{VELOCITY}{}", model.store.name(id));
        if *name != expected {
            return Err(r.fail(format!("manifest[{i}].name: found {name}, expected {expected}")));
        }
        if dims.as_slice() != model.store.get(id).shape() {
            return Err(r.fail(format!("manifest[{i}].shape: {name} is {dims:?}")));
        }
        velocity.push(tensors.next().expect("counted"));
    }
    let mut optimizer = Sgd::new(config.train.lr, config.train.momentum);
    optimizer.set_velocity(velocity);
    let state = TrainState {
        model,
        optimizer,
        epochs_completed: meta.epochs_completed,
        loss_trace: meta.loss_trace,
        val_trace: meta.val_trace,
        early: meta.early,
        training_time_s: meta.training_time_s,
    };
    Ok(Checkpoint {
        config,
        state,
        report: meta.report,
    })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode(&buf, path)
}

/// `<out>/checkpoint.qrcl`.
pub fn default_path(out: &Path) -> PathBuf {
    out.join("checkpoint.qrcl")
}
