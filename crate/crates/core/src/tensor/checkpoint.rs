//! Plain-text parameter checkpoints.
//!
//! ```text
//! agvid-checkpoint 1
//! <name> <rank> <dim_0> ... <dim_{rank-1}>
//! <value> <value> ...            (row-major, one line per tensor)
//! ```
//!
//! Names contain no whitespace. Values are written with Rust's shortest
//! round-trip float formatting, so save followed by load is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::{ParamStore, Tensor};

const MAGIC: &str = "agvid-checkpoint 1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("checkpoint line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
}

pub fn to_string(store: &ParamStore) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    for p in store.params() {
        write!(out, "{} {}", p.name, p.value.rank()).unwrap();
        for d in p.value.shape() {
            write!(out, " {d}").unwrap();
        }
        out.push('\n');
        for (i, v) in p.value.data().iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses a checkpoint into `(name, tensor)` pairs in file order.
pub fn parse(text: &str) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let fmt = |line: usize, msg: String| CheckpointError::Format { line, msg };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return Err(fmt(1, format!("expected header `{MAGIC}`"))),
    }
    let mut out = Vec::new();
    while let Some((ln, header)) = lines.next() {
        if header.trim().is_empty() {
            continue;
        }
        let mut parts = header.split_whitespace();
        let name = parts.next().unwrap().to_string();
        let nums: Result<Vec<usize>, _> = parts.map(str::parse).collect();
        let nums = nums.map_err(|e| fmt(ln, format!("bad shape: {e}")))?;
        let (&rank, dims) = nums
            .split_first()
            .ok_or_else(|| fmt(ln, "missing rank".into()))?;
        if dims.len() != rank {
            return Err(fmt(ln, format!("rank {rank} but {} dims", dims.len())));
        }
        let (vln, body) = lines
            .next()
            .ok_or_else(|| fmt(ln + 1, format!("missing values for `{name}`")))?;
        let values: Result<Vec<f64>, _> = body.split_whitespace().map(str::parse).collect();
        let values = values.map_err(|e| fmt(vln, format!("bad value: {e}")))?;
        let t = Tensor::new(dims, values).map_err(|e| fmt(vln, e.to_string()))?;
        out.push((name, t));
    }
    Ok(out)
}

/// Overwrites the values of `store` from checkpoint text. Every parameter
/// must be present with a matching shape; extra entries are rejected.
pub fn load_into(store: &mut ParamStore, text: &str) -> Result<(), CheckpointError> {
    let entries = parse(text)?;
    if entries.len() != store.len() {
        return Err(CheckpointError::Mismatch(format!(
            "{} tensors in file, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for (name, t) in entries {
        let id = store
            .id(&name)
            .map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
        if store.value(id).shape() != t.shape() {
            return Err(CheckpointError::Mismatch(format!(
                "`{name}` has shape {:?}, expected {:?}",
                t.shape(),
                store.value(id).shape()
            )));
        }
        *store.value_mut(id) = t;
    }
    Ok(())
}

pub fn save(store: &ParamStore, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, to_string(store)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(store: &mut ParamStore, path: &Path) -> Result<(), CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_into(store, &text)
}
