//! Tensor files, JSON run reports and CSV traces.
//!
//! Text tensors start with a header line `L d_1 ... d_L` followed by the
//! `prod d_i` entries in row-major order, separated by any whitespace.
//! Binary tensors start with the 8-byte magic `TNSR\x01\0\0\0`, then `L` and
//! the dims as little-endian `u64`, then the entries as little-endian `f64`.
//! Every write goes to a temporary file in the target directory that is
//! renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::error::{CpdError, Result};
use crate::generators::InstanceMetadata;
use crate::kruskal::KruskalOperand;
use crate::solver::{IterationRecord, RunSummary, SolverOptions, Termination};
use crate::tensor::DenseTensor;
use crate::Matrix;

pub const BINARY_MAGIC: [u8; 8] = *b"TNSR\x01\0\0\0";
pub const SCHEMA_VERSION: &str = "cpd-report/1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorFormat {
    #[default]
    Text,
    Binary,
}

impl TensorFormat {
    /// `.bin` and `.tnsb` mean binary, anything else text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("tnsb") => TensorFormat::Binary,
            _ => TensorFormat::Text,
        }
    }
}

fn parse_err(offset: usize, message: impl Into<String>) -> CpdError {
    CpdError::Parse {
        offset,
        message: message.into(),
    }
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn encode_text(t: &DenseTensor) -> String {
    let mut s = String::with_capacity(t.len() * 24 + 32);
    s.push_str(&t.order().to_string());
    for d in t.dims() {
        s.push(' ');
        s.push_str(&d.to_string());
    }
    s.push('\n');
    let last = t.dims().last().copied().unwrap_or(1);
    for (i, v) in t.data().iter().enumerate() {
        s.push_str(&format!("{v:?}"));
        s.push(if (i + 1) % last == 0 { '\n' } else { ' ' });
    }
    s
}

pub fn encode_binary(t: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * (t.order() + t.len()));
    out.extend_from_slice(&BINARY_MAGIC);
    out.extend_from_slice(&(t.order() as u64).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Whitespace-separated tokens with their byte offsets.
fn tokens(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut pos = 0;
    std::iter::from_fn(move || {
        let rest = &text[pos..];
        let start = rest.find(|c: char| !c.is_whitespace())?;
        let tail = &rest[start..];
        let len = tail.find(char::is_whitespace).unwrap_or(tail.len());
        let off = pos + start;
        pos = off + len;
        Some((off, &text[off..off + len]))
    })
}

pub fn decode_text(bytes: &[u8]) -> Result<DenseTensor> {
    let text = std::str::from_utf8(bytes).map_err(|e| parse_err(e.valid_up_to(), "file is not UTF-8"))?;
    let header_end = text.find('\n').unwrap_or(text.len());
    let mut header = tokens(&text[..header_end]);
    let (off, tok) = header.next().ok_or_else(|| parse_err(0, "missing header"))?;
    let order: usize = tok
        .parse()
        .map_err(|_| parse_err(off, format!("invalid order {tok:?}")))?;
    if order == 0 {
        return Err(parse_err(off, "order must be at least 1"));
    }
    let mut dims = Vec::with_capacity(order);
    for (off, tok) in header.by_ref() {
        let d: usize = tok
            .parse()
            .map_err(|_| parse_err(off, format!("invalid dimension {tok:?}")))?;
        if d == 0 {
            return Err(parse_err(off, "dimensions must be positive"));
        }
        dims.push(d);
    }
    if dims.len() != order {
        return Err(parse_err(
            header_end,
            format!("header declares order {order} but lists {} dims", dims.len()),
        ));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| parse_err(0, "tensor size overflows"))?;
    let mut data = Vec::with_capacity(count.min(1 << 24));
    for (off, tok) in tokens(&text[header_end..]).map(|(o, t)| (o + header_end, t)) {
        if data.len() == count {
            return Err(parse_err(off, format!("more than the {count} expected entries")));
        }
        let v: f64 = tok
            .parse()
            .map_err(|_| parse_err(off, format!("invalid number {tok:?}")))?;
        if !v.is_finite() {
            return Err(parse_err(off, format!("non-finite entry {tok:?}")));
        }
        data.push(v);
    }
    if data.len() != count {
        return Err(parse_err(
            bytes.len(),
            format!("expected {count} entries, found {}", data.len()),
        ));
    }
    DenseTensor::new(dims, data)
}

pub fn decode_binary(bytes: &[u8]) -> Result<DenseTensor> {
    if bytes.len() < 16 || bytes[..8] != BINARY_MAGIC {
        return Err(parse_err(0, "missing binary tensor magic"));
    }
    let word = |off: usize| -> Result<u64> {
        bytes
            .get(off..off + 8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .ok_or_else(|| parse_err(off, "file ends inside the header"))
    };
    let order = word(8)? as usize;
    if order == 0 || order > 64 {
        return Err(parse_err(8, format!("unsupported order {order}")));
    }
    let mut dims = Vec::with_capacity(order);
    for l in 0..order {
        let off = 16 + 8 * l;
        let d = word(off)? as usize;
        if d == 0 {
            return Err(parse_err(off, "dimensions must be positive"));
        }
        dims.push(d);
    }
    let data_start = 16 + 8 * order;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| parse_err(16, "tensor size overflows"))?;
    let expected = count
        .checked_mul(8)
        .and_then(|n| n.checked_add(data_start))
        .ok_or_else(|| parse_err(16, "tensor size overflows"))?;
    if bytes.len() != expected {
        return Err(parse_err(
            bytes.len().min(expected),
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in bytes[data_start..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(parse_err(data_start + 8 * i, "non-finite entry"));
        }
        data.push(v);
    }
    DenseTensor::new(dims, data)
}

/// Reads either format; binary files are recognized by their magic.
pub fn read_tensor(path: &Path) -> Result<DenseTensor> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(&BINARY_MAGIC) {
        decode_binary(&bytes)
    } else {
        decode_text(&bytes)
    }
}

pub fn write_tensor(t: &DenseTensor, path: &Path, format: TensorFormat) -> Result<()> {
    match format {
        TensorFormat::Text => write_atomic(path, encode_text(t).as_bytes()),
        TensorFormat::Binary => write_atomic(path, &encode_binary(t)),
    }
}

/// Serializes `value` as pretty JSON (with a trailing newline) atomically.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProblemInfo {
    /// File name or generator description.
    pub source: String,
    pub dims: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceMetadata>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: String,
    pub problem: ProblemInfo,
    pub options: SolverOptions,
    pub trace: Vec<IterationRecord>,
    pub rel_error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_rel_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
    pub seed: u64,
    pub best_restart: usize,
    #[serde(default)]
    pub runs: Vec<RunSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operand: Option<KruskalOperand>,
    pub wall_time_secs: f64,
}

impl ResultRecord {
    pub fn new(problem: ProblemInfo, options: SolverOptions) -> Self {
        let seed = options.seed;
        Self {
            schema_version: SCHEMA_VERSION.into(),
            problem,
            options,
            trace: Vec::new(),
            rel_error: 1.0,
            clean_rel_error: None,
            termination: None,
            seed,
            best_restart: 0,
            runs: Vec::new(),
            operand: None,
            wall_time_secs: 0.0,
        }
    }

    /// Pretty JSON, newline-terminated.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses a report, ignoring unknown fields and rejecting other schema versions.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_str())
            .unwrap_or("<missing>");
        if found != SCHEMA_VERSION {
            return Err(CpdError::Schema {
                expected: SCHEMA_VERSION.into(),
                found: found.into(),
            });
        }
        Ok(serde_json::from_value(value)?)
    }
}

pub fn write_report(r: &ResultRecord, path: &Path) -> Result<()> {
    write_atomic(path, r.to_json()?.as_bytes())
}

pub fn read_report(path: &Path) -> Result<ResultRecord> {
    ResultRecord::from_json(&fs::read_to_string(path)?)
}

/// One header row plus one row per iteration; an undefined gain is left empty.
pub fn trace_csv(trace: &[IterationRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "iteration",
        "rel_error",
        "mu",
        "gain",
        "cg_iterations",
        "step_norm",
        "grad_dot_step",
        "accepted",
        "rejections",
    ])?;
    for r in trace {
        w.write_record([
            r.iteration.to_string(),
            format!("{:?}", r.rel_error),
            format!("{:?}", r.mu),
            r.gain.map(|g| format!("{g:?}")).unwrap_or_default(),
            r.cg_iterations.to_string(),
            format!("{:?}", r.step_norm),
            format!("{:?}", r.grad_dot_step),
            r.accepted.to_string(),
            r.rejections.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| CpdError::Io(e.into_error()))
}

pub fn write_trace_csv(trace: &[IterationRecord], path: &Path) -> Result<()> {
    write_atomic(path, &trace_csv(trace)?)
}

/// Samples as CSV without header, one sample per row.
pub fn read_samples_csv(path: &Path) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let offset = rec.position().map(|p| p.byte() as usize).unwrap_or(0);
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(offset, format!("invalid sample value {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(offset, format!("row has {} values, expected {}", row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(parse_err(0, "no samples"));
    }
    let d = rows[0].len();
    Ok(Matrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}
