//! Capture container and report serialization.
//!
//! A capture file is a single binary container:
//!
//! ```text
//! offset 0   8 bytes   magic "SPECLLM1"
//! offset 8   8 bytes   manifest length M, little-endian u64
//! offset 16  M bytes   UTF-8 JSON manifest
//! offset 16+M          data section: raw little-endian f32 tensors at the
//!                      offsets declared by the manifest (relative to the
//!                      start of the data section)
//! ```
//!
//! Required tensors are `attn.{layer}.{head}` with shape `[N, N]` for every
//! layer and head, and `hidden.{layer}` with shape `[N, d]` for layers
//! `0..=L` (embedding output plus one per layer).

mod report;

pub use report::{
    read_trajectory_report, write_report, ReportFormat, ReportRef, CSV_HEADER, EVAL_CSV_HEADER,
};

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"SPECLLM1";
pub const FORMAT_VERSION: u32 = 1;

/// Tolerance on attention row sums (post-softmax property).
pub const ROW_SUM_TOL: f64 = 1e-4;
/// Upper slack on individual attention entries.
pub const ENTRY_UPPER_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("format error: bad magic {found:?}, expected \"SPECLLM1\"")]
    BadMagic { found: String },
    #[error("length error: {context}: expected {expected} bytes, found {actual}")]
    Length {
        context: String,
        expected: u64,
        actual: u64,
    },
    #[error("format error: manifest is not valid JSON: {0}")]
    Manifest(#[source] serde_json::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("report has no layers")]
    EmptyReport,
    #[error("report serialization failed: {0}")]
    Report(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CaptureError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunLabel {
    Factual,
    Logical,
    Semantic,
    Substitution,
    Unknown,
}

impl RunLabel {
    /// `Some(true)` for the hallucination classes, `None` when unlabeled.
    pub fn is_hallucination(self) -> Option<bool> {
        match self {
            RunLabel::Factual => Some(false),
            RunLabel::Logical | RunLabel::Semantic | RunLabel::Substitution => Some(true),
            RunLabel::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub byte_length: u64,
}

impl TensorEntry {
    pub fn expected_length(&self) -> u64 {
        4 * self.shape.iter().map(|&s| s as u64).product::<u64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureManifest {
    pub format_version: u32,
    pub model_id: String,
    pub num_layers: usize,
    pub num_heads: usize,
    pub num_tokens: usize,
    pub hidden_dim: usize,
    pub prompt_text: String,
    pub label: RunLabel,
    pub domain_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    pub tensor_entries: Vec<TensorEntry>,
}

/// Run metadata supplied when assembling a capture in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureMeta {
    pub model_id: String,
    pub prompt_text: String,
    pub label: RunLabel,
    pub domain_tag: String,
    pub token_logprobs: Option<Vec<f64>>,
}

impl CaptureMeta {
    pub fn new(
        model_id: impl Into<String>,
        label: RunLabel,
        domain_tag: impl Into<String>,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            prompt_text: String::new(),
            label,
            domain_tag: domain_tag.into(),
            token_logprobs: None,
        }
    }
}

pub fn attention_name(layer: usize, head: usize) -> String {
    format!("attn.{layer}.{head}")
}

pub fn hidden_name(layer: usize) -> String {
    format!("hidden.{layer}")
}

/// All tensors and metadata of one prompt run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunCapture {
    pub manifest: CaptureManifest,
    pub tensors: BTreeMap<String, Array2<f32>>,
}

impl RunCapture {
    /// Assembles a capture with a contiguous canonical layout: attention
    /// tensors by layer then head, followed by hidden states.
    ///
    /// `attention[l][h]` is the `[N, N]` matrix of head `h` at layer `l`;
    /// `hidden` holds `L + 1` matrices of shape `[N, d]`.
    pub fn new(
        meta: CaptureMeta,
        attention: Vec<Vec<Array2<f32>>>,
        hidden: Vec<Array2<f32>>,
    ) -> Result<Self> {
        let num_layers = attention.len();
        let num_heads = attention.first().map_or(0, Vec::len);
        let num_tokens = hidden.first().map_or(0, |h| h.nrows());
        let hidden_dim = hidden.first().map_or(0, |h| h.ncols());

        let mut tensors = BTreeMap::new();
        let mut entries = Vec::new();
        let mut offset = 0u64;
        let mut push = |name: String, t: Array2<f32>| {
            let len = 4 * t.len() as u64;
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: DType::F32,
                shape: vec![t.nrows(), t.ncols()],
                byte_offset: offset,
                byte_length: len,
            });
            offset += len;
            tensors.insert(name, t);
        };
        for (l, heads) in attention.into_iter().enumerate() {
            for (h, a) in heads.into_iter().enumerate() {
                push(attention_name(l, h), a);
            }
        }
        for (l, x) in hidden.into_iter().enumerate() {
            push(hidden_name(l), x);
        }

        let capture = RunCapture {
            manifest: CaptureManifest {
                format_version: FORMAT_VERSION,
                model_id: meta.model_id,
                num_layers,
                num_heads,
                num_tokens,
                hidden_dim,
                prompt_text: meta.prompt_text,
                label: meta.label,
                domain_tag: meta.domain_tag,
                token_logprobs: meta.token_logprobs,
                tensor_entries: entries,
            },
            tensors,
        };
        capture.validate()?;
        Ok(capture)
    }

    pub fn num_layers(&self) -> usize {
        self.manifest.num_layers
    }

    pub fn num_heads(&self) -> usize {
        self.manifest.num_heads
    }

    pub fn num_tokens(&self) -> usize {
        self.manifest.num_tokens
    }

    pub fn attention(&self, layer: usize, head: usize) -> Option<&Array2<f32>> {
        self.tensors.get(&attention_name(layer, head))
    }

    pub fn hidden(&self, layer: usize) -> Option<&Array2<f32>> {
        self.tensors.get(&hidden_name(layer))
    }

    /// Checks every structural and numeric invariant of the capture.
    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if m.format_version != FORMAT_VERSION {
            return Err(CaptureError::Schema(format!(
                "unsupported format_version {}",
                m.format_version
            )));
        }
        if m.num_tokens < 2 || m.num_layers < 1 || m.num_heads < 1 || m.hidden_dim < 1 {
            return Err(CaptureError::Schema(format!(
                "dimensions out of range: N={} L={} H={} d={} (need N>=2, L>=1, H>=1, d>=1)",
                m.num_tokens, m.num_layers, m.num_heads, m.hidden_dim
            )));
        }

        let mut declared = BTreeMap::new();
        for e in &m.tensor_entries {
            if e.shape.is_empty() || e.shape.iter().any(|&s| s == 0) {
                return Err(CaptureError::Schema(format!(
                    "{} has non-positive shape {:?}",
                    e.name, e.shape
                )));
            }
            if e.byte_length != e.expected_length() {
                return Err(CaptureError::Length {
                    context: e.name.clone(),
                    expected: e.expected_length(),
                    actual: e.byte_length,
                });
            }
            if declared.insert(e.name.as_str(), e).is_some() {
                return Err(CaptureError::Schema(format!(
                    "duplicate tensor entry {}",
                    e.name
                )));
            }
            match self.tensors.get(&e.name) {
                Some(t) if e.shape == [t.nrows(), t.ncols()] => {}
                Some(t) => {
                    return Err(CaptureError::Schema(format!(
                        "{} declared shape {:?} but tensor is {:?}",
                        e.name,
                        e.shape,
                        t.shape()
                    )))
                }
                None => {
                    return Err(CaptureError::Schema(format!(
                        "{} declared but not present",
                        e.name
                    )))
                }
            }
        }
        if let Some(extra) = self
            .tensors
            .keys()
            .find(|k| !declared.contains_key(k.as_str()))
        {
            return Err(CaptureError::Schema(format!(
                "tensor {extra} has no manifest entry"
            )));
        }
        check_overlaps(&m.tensor_entries)?;

        let n = m.num_tokens;
        let require = |name: String, rows: usize, cols: usize| -> Result<&Array2<f32>> {
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| CaptureError::Schema(format!("missing required tensor {name}")))?;
            if t.dim() != (rows, cols) {
                return Err(CaptureError::Schema(format!(
                    "{name} has shape {:?}, expected [{rows}, {cols}]",
                    t.shape()
                )));
            }
            Ok(t)
        };

        for l in 0..m.num_layers {
            for h in 0..m.num_heads {
                let name = attention_name(l, h);
                let a = require(name.clone(), n, n)?;
                validate_attention(&name, a)?;
            }
        }
        for l in 0..=m.num_layers {
            let name = hidden_name(l);
            let x = require(name.clone(), n, m.hidden_dim)?;
            if let Some(((i, j), v)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Err(CaptureError::Validation(format!(
                    "{name} entry ({i}, {j}) is not finite: {v}"
                )));
            }
        }

        if let Some(lp) = &m.token_logprobs {
            if lp.len() != n {
                return Err(CaptureError::Schema(format!(
                    "token_logprobs has {} values, expected {n}",
                    lp.len()
                )));
            }
            if let Some((i, v)) = lp
                .iter()
                .enumerate()
                .find(|(_, v)| !v.is_finite() || **v > 1e-6)
            {
                return Err(CaptureError::Validation(format!(
                    "token_logprobs[{i}] = {v} is not a valid log-probability"
                )));
            }
        }
        Ok(())
    }

    /// Serializes the capture into a byte vector.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        write_capture(self, &mut out)?;
        Ok(out)
    }

    /// Content digest (SHA-256 over the serialized capture), used as the run
    /// identifier for calibration/test separation.
    pub fn fingerprint(&self) -> Result<String> {
        let bytes = self.to_bytes()?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

fn check_overlaps(entries: &[TensorEntry]) -> Result<()> {
    let mut spans: Vec<(u64, u64, &str)> = entries
        .iter()
        .map(|e| {
            (
                e.byte_offset,
                e.byte_offset + e.byte_length,
                e.name.as_str(),
            )
        })
        .collect();
    spans.sort_unstable();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(CaptureError::Schema(format!(
                "tensor {} overlaps tensor {}",
                w[1].2, w[0].2
            )));
        }
    }
    Ok(())
}

fn validate_attention(name: &str, a: &Array2<f32>) -> Result<()> {
    for (i, row) in a.rows().into_iter().enumerate() {
        let mut sum = 0.0f64;
        for (j, &v) in row.iter().enumerate() {
            let v = f64::from(v);
            if !v.is_finite() || v < 0.0 || v > 1.0 + ENTRY_UPPER_TOL {
                return Err(CaptureError::Validation(format!(
                    "{name} entry ({i}, {j}) = {v} outside [0, 1]"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(CaptureError::Validation(format!(
                "{name} row {i} sums to {sum:.4}"
            )));
        }
    }
    Ok(())
}

/// Writes `capture` in the container format. The capture is validated first.
pub fn write_capture<W: Write>(capture: &RunCapture, dest: &mut W) -> Result<()> {
    capture.validate()?;
    let manifest = serde_json::to_vec(&capture.manifest).map_err(CaptureError::Manifest)?;
    let data_len = capture
        .manifest
        .tensor_entries
        .iter()
        .map(|e| e.byte_offset + e.byte_length)
        .max()
        .unwrap_or(0);
    let mut data = vec![0u8; data_len as usize];
    for e in &capture.manifest.tensor_entries {
        let t = &capture.tensors[&e.name];
        let start = e.byte_offset as usize;
        for (k, v) in t.iter().enumerate() {
            data[start + 4 * k..start + 4 * k + 4].copy_from_slice(&v.to_le_bytes());
        }
    }
    dest.write_all(MAGIC)?;
    dest.write_all(&(manifest.len() as u64).to_le_bytes())?;
    dest.write_all(&manifest)?;
    dest.write_all(&data)?;
    Ok(())
}

/// Reads and eagerly validates a capture.
pub fn read_capture<R: Read>(source: &mut R) -> Result<RunCapture> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse_capture(&bytes)
}

pub fn parse_capture(bytes: &[u8]) -> Result<RunCapture> {
    if bytes.len() >= 8 && &bytes[..8] != MAGIC {
        return Err(CaptureError::BadMagic {
            found: String::from_utf8_lossy(&bytes[..8]).into_owned(),
        });
    }
    if bytes.len() < 16 {
        if bytes.len() < 8 && !MAGIC.starts_with(bytes) {
            return Err(CaptureError::BadMagic {
                found: String::from_utf8_lossy(bytes).into_owned(),
            });
        }
        return Err(CaptureError::Length {
            context: "header".into(),
            expected: 16,
            actual: bytes.len() as u64,
        });
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8-byte slice"));
    let body = &bytes[16..];
    if manifest_len > body.len() as u64 {
        return Err(CaptureError::Length {
            context: "manifest".into(),
            expected: manifest_len,
            actual: body.len() as u64,
        });
    }
    let (manifest_bytes, data) = body.split_at(manifest_len as usize);
    let manifest: CaptureManifest =
        serde_json::from_slice(manifest_bytes).map_err(CaptureError::Manifest)?;

    let mut tensors = BTreeMap::new();
    for e in &manifest.tensor_entries {
        if e.byte_length != e.expected_length() {
            return Err(CaptureError::Length {
                context: e.name.clone(),
                expected: e.expected_length(),
                actual: e.byte_length,
            });
        }
        if e.shape.len() != 2 {
            return Err(CaptureError::Schema(format!(
                "{} has rank {}, only rank-2 tensors are supported",
                e.name,
                e.shape.len()
            )));
        }
        let available = (data.len() as u64).saturating_sub(e.byte_offset);
        if e.byte_length > available {
            return Err(CaptureError::Length {
                context: e.name.clone(),
                expected: e.byte_length,
                actual: available,
            });
        }
        let start = e.byte_offset as usize;
        let raw = &data[start..start + e.byte_length as usize];
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        let t = Array2::from_shape_vec((e.shape[0], e.shape[1]), values)
            .map_err(|err| CaptureError::Schema(format!("{}: {err}", e.name)))?;
        tensors.insert(e.name.clone(), t);
    }
    let capture = RunCapture { manifest, tensors };
    capture.validate()?;
    Ok(capture)
}
