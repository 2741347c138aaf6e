//! On-disk checkpoint container and compatibility validation.
//!
//! Container layout (`.ckav`):
//!
//!   bytes 0..4    magic, ASCII "CKAV"
//!   bytes 4..8    version, u32 LE (currently 1)
//!   bytes 8..16   header length H, u64 LE
//!   bytes 16..16+H
//!                 UTF-8 JSON header:
//!                   {"meta": {"step": int, "dev_ppl": float|null, "tag": string},
//!                    "tensors": [{"name", "kind", "shape", "offset", "nbytes"}, ...]}
//!                 entries sorted by (kind, name)
//!   rest          raw little-endian f32 payload; offsets are relative to the
//!                 payload start; regions are contiguous and non-overlapping
//!                 in header order
//!
//! Kinds "param" and "grad" are written today; "m1"/"m2" are reserved for
//! optimizer moment tensors and rejected with a dedicated message.
//!
//! Two writes of the same checkpoint produce identical bytes: the JSON
//! field order is fixed, tensor entries are sorted, and floats are
//! emitted in shortest round-trip form.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, TensorMap};

pub const MAGIC: &[u8; 4] = b"CKAV";
pub const VERSION: u32 = 1;

const KIND_PARAM: &str = "param";
const KIND_GRAD: &str = "grad";
const KINDS_RESERVED: [&str; 2] = ["m1", "m2"];

/// Smallest admissible dev perplexity; guards the log in softmax weighting.
pub const MIN_DEV_PPL: f64 = 1e-9;

/// Metadata attached to a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    /// Training step at save time.
    pub step: u64,
    /// Development-set perplexity measured at save time, if available.
    pub dev_ppl: Option<f64>,
    /// Free-form label.
    pub tag: String,
}

impl CheckpointMeta {
    pub fn new(step: u64, dev_ppl: Option<f64>, tag: impl Into<String>) -> Result<Self> {
        let meta = Self {
            step,
            dev_ppl,
            tag: tag.into(),
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self.dev_ppl {
            if !p.is_finite() || p <= MIN_DEV_PPL {
                return Err(Error::InvalidMeta(format!(
                    "dev_ppl must be finite and > {MIN_DEV_PPL}, got {p}"
                )));
            }
        }
        Ok(())
    }
}

/// A saved model state: parameters, optional stored gradients, metadata.
///
/// Immutable after construction; gradients, when present, carry exactly
/// the same names and shapes as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    params: TensorMap<f32>,
    grads: Option<TensorMap<f32>>,
    meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(
        params: TensorMap<f32>,
        grads: Option<TensorMap<f32>>,
        meta: CheckpointMeta,
    ) -> Result<Self> {
        meta.validate()?;
        if let Some(g) = &grads {
            params
                .check_same_layout(g, 0)
                .map_err(|e| Error::GradParamMismatch(e.to_string()))?;
        }
        Ok(Self {
            params,
            grads,
            meta,
        })
    }

    pub fn params(&self) -> &TensorMap<f32> {
        &self.params
    }

    pub fn grads(&self) -> Option<&TensorMap<f32>> {
        self.grads.as_ref()
    }

    pub fn has_grads(&self) -> bool {
        self.grads.is_some()
    }

    pub fn meta(&self) -> &CheckpointMeta {
        &self.meta
    }

    /// Copy of this checkpoint without gradients, with fresh metadata.
    pub fn with_params(params: TensorMap<f32>, meta: CheckpointMeta) -> Result<Self> {
        Self::new(params, None, meta)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReadOptions {
    /// Accept NaN/Inf payload values instead of failing the read.
    pub allow_nonfinite: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderJson {
    meta: MetaJson,
    tensors: Vec<EntryJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaJson {
    step: u64,
    dev_ppl: Option<f64>,
    tag: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryJson {
    name: String,
    kind: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

/// Writes a checkpoint to `path` in the container format.
///
/// The write is deterministic: the same checkpoint always produces the
/// same bytes.
pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let bytes = to_bytes(ckpt)?;
    let mut file = fs::File::create(path.as_ref())?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Serializes a checkpoint to the container byte layout.
pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    // (kind, name, tensor) sorted by (kind, name): "grad" < "param".
    let mut ordered: Vec<(&str, &str, &Tensor<f32>)> = Vec::new();
    if let Some(grads) = ckpt.grads() {
        for (name, t) in grads.iter() {
            ordered.push((KIND_GRAD, name, t));
        }
    }
    for (name, t) in ckpt.params().iter() {
        ordered.push((KIND_PARAM, name, t));
    }

    let mut entries = Vec::with_capacity(ordered.len());
    let mut offset = 0u64;
    for (kind, name, t) in &ordered {
        let nbytes = (t.len() * 4) as u64;
        entries.push(EntryJson {
            name: name.to_string(),
            kind: kind.to_string(),
            shape: t.shape().to_vec(),
            offset,
            nbytes,
        });
        offset += nbytes;
    }

    let header = HeaderJson {
        meta: MetaJson {
            step: ckpt.meta().step,
            dev_ppl: ckpt.meta().dev_ppl,
            tag: ckpt.meta().tag.clone(),
        },
        tensors: entries,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::InvalidHeader(e.to_string()))?;

    let mut out = Vec::with_capacity(16 + header_bytes.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, _, t) in &ordered {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Reads a checkpoint, rejecting non-finite values.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint_with(path, ReadOptions::default())
}

pub fn read_checkpoint_with(path: impl AsRef<Path>, opts: ReadOptions) -> Result<Checkpoint> {
    let bytes = fs::read(path.as_ref())?;
    from_bytes(&bytes, opts)
}

/// Parses a checkpoint from container bytes, validating the header,
/// payload bounds and (by default) value finiteness.
pub fn from_bytes(bytes: &[u8], opts: ReadOptions) -> Result<Checkpoint> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            context: format!("file has {} bytes, magic needs 4", bytes.len()),
        });
    }
    let mut magic = [0u8; 4];
    magic.copy_from_slice(&bytes[..4]);
    if &magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    if bytes.len() < 16 {
        return Err(Error::Truncated {
            context: format!("file has {} bytes, fixed header needs 16", bytes.len()),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload_start = 16usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Truncated {
            context: format!(
                "header declares {header_len} bytes but only {} remain",
                bytes.len().saturating_sub(16)
            ),
        })?;

    let header: HeaderJson = serde_json::from_slice(&bytes[16..payload_start])
        .map_err(|e| Error::InvalidHeader(e.to_string()))?;
    let payload = &bytes[payload_start..];

    // Header order and region layout checks.
    let mut expected_offset = 0u64;
    let mut prev_key: Option<(&str, &str)> = None;
    for e in &header.tensors {
        match e.kind.as_str() {
            KIND_PARAM | KIND_GRAD => {}
            k if KINDS_RESERVED.contains(&k) => {
                return Err(Error::InvalidHeader(format!(
                    "tensor kind \"{k}\" is reserved and not supported by this reader"
                )));
            }
            k => {
                return Err(Error::InvalidHeader(format!("unknown tensor kind \"{k}\"")));
            }
        }
        let key = (e.kind.as_str(), e.name.as_str());
        if let Some(prev) = prev_key {
            if prev >= key {
                return Err(Error::InvalidHeader(format!(
                    "tensor entries not strictly sorted by (kind, name) at \"{}\"",
                    e.name
                )));
            }
        }
        prev_key = Some(key);

        if e.shape.contains(&0) {
            return Err(Error::InvalidShape {
                shape: e.shape.clone(),
            });
        }
        let elems: usize = e.shape.iter().product();
        if e.nbytes != (elems * 4) as u64 {
            return Err(Error::InvalidHeader(format!(
                "tensor \"{}\": shape {:?} implies {} bytes, header declares {}",
                e.name,
                e.shape,
                elems * 4,
                e.nbytes
            )));
        }
        if e.offset != expected_offset {
            return Err(Error::InvalidHeader(format!(
                "tensor \"{}\": offset {} breaks contiguity (expected {})",
                e.name, e.offset, expected_offset
            )));
        }
        expected_offset += e.nbytes;
    }
    if (payload.len() as u64) < expected_offset {
        return Err(Error::Truncated {
            context: format!(
                "payload has {} bytes, header declares {expected_offset}",
                payload.len()
            ),
        });
    }
    if (payload.len() as u64) > expected_offset {
        return Err(Error::InvalidHeader(format!(
            "payload has {} trailing bytes beyond declared {expected_offset}",
            payload.len() as u64 - expected_offset
        )));
    }

    let mut params = TensorMap::new();
    let mut grads = TensorMap::new();
    for e in &header.tensors {
        let start = e.offset as usize;
        let end = start + e.nbytes as usize;
        let data: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(e.shape.clone(), data)?;
        if !opts.allow_nonfinite {
            if let Some(index) = tensor.first_nonfinite() {
                return Err(Error::NonFinite {
                    name: e.name.clone(),
                    index,
                });
            }
        }
        match e.kind.as_str() {
            KIND_PARAM => params.insert(e.name.clone(), tensor)?,
            _ => grads.insert(e.name.clone(), tensor)?,
        }
    }

    let meta = CheckpointMeta::new(header.meta.step, header.meta.dev_ppl, header.meta.tag)?;
    let grads = if grads.is_empty() { None } else { Some(grads) };
    Checkpoint::new(params, grads, meta)
}

/// Checks that all checkpoints share identical parameter names and shapes.
/// Gradient presence may differ between checkpoints.
pub fn validate_compat(ckpts: &[Checkpoint]) -> Result<()> {
    let first = ckpts.first().ok_or(Error::EmptySeries)?;
    for (i, c) in ckpts.iter().enumerate().skip(1) {
        first.params().check_same_layout(c.params(), i)?;
    }
    Ok(())
}
