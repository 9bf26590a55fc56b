//! On-disk formats.
//!
//! **SPM** model container:
//!
//! ```text
//! [8 bytes  "SPMODEL1"]
//! [u64 LE   manifest length M]
//! [M bytes  JSON manifest: format_version, graph, tensor directory]
//! [blob     concatenated little-endian f32 payloads]
//! ```
//!
//! Directory offsets are relative to the start of the blob.
//!
//! **TNS** raw tensor:
//!
//! ```text
//! [4 bytes "TNS1"][u32 LE dtype: 0 = f32, 1 = u32][u32 LE ndim]
//! [ndim x u64 LE dims][little-endian payload]
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Model, ModelGraph};
use crate::tensor::Tensor;

pub const SPM_MAGIC: &[u8; 8] = b"SPMODEL1";
pub const SPM_VERSION: u32 = 1;
pub const TNS_MAGIC: &[u8; 4] = b"TNS1";

const SPM_HEADER: u64 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub dims: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub graph: ModelGraph,
    pub tensors: Vec<TensorEntry>,
}

fn load_err(offset: u64, detail: impl Into<String>) -> Error {
    Error::Load { offset, detail: detail.into() }
}

/// Serializes a model. Tensors are written in name order, so equal models
/// produce identical bytes.
pub fn encode_model(model: &Model) -> Result<Vec<u8>> {
    model.validate()?;
    let mut blob = Vec::new();
    let mut tensors = Vec::with_capacity(model.weights.len());
    for (name, t) in &model.weights {
        let offset = blob.len() as u64;
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: name.clone(),
            dtype: "f32".into(),
            dims: t.dims().to_vec(),
            offset,
            length: blob.len() as u64 - offset,
        });
    }
    let manifest = Manifest { format_version: SPM_VERSION, graph: model.graph.clone(), tensors };
    let text = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| Error::Graph(format!("manifest serialization failed: {e}")))?;
    let mut out = Vec::with_capacity(SPM_HEADER as usize + text.len() + blob.len());
    out.extend_from_slice(SPM_MAGIC);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < SPM_HEADER as usize {
        return Err(load_err(0, format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..8] != SPM_MAGIC {
        return Err(load_err(0, "bad magic, expected SPMODEL1"));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let blob_start = SPM_HEADER
        .checked_add(mlen)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| load_err(8, format!("manifest length {mlen} runs past end of file")))?;
    let text = &bytes[SPM_HEADER as usize..blob_start as usize];
    let manifest: Manifest = serde_json::from_slice(text).map_err(|e| {
        load_err(SPM_HEADER, format!("corrupt manifest (line {}, column {}): {e}", e.line(), e.column()))
    })?;
    if manifest.format_version != SPM_VERSION {
        return Err(load_err(
            SPM_HEADER,
            format!("unsupported format version {}", manifest.format_version),
        ));
    }
    let blob = &bytes[blob_start as usize..];

    let mut spans: Vec<(u64, u64, &str)> = Vec::new();
    let mut weights = BTreeMap::new();
    for e in &manifest.tensors {
        let at = blob_start.saturating_add(e.offset);
        if e.dtype != "f32" {
            return Err(load_err(at, format!("tensor `{}` has unsupported dtype `{}`", e.name, e.dtype)));
        }
        let numel = e.dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
        if numel.and_then(|n| n.checked_mul(4)) != Some(e.length) {
            return Err(load_err(
                at,
                format!("tensor `{}` dims {:?} disagree with byte length {}", e.name, e.dims, e.length),
            ));
        }
        let end = e.offset.checked_add(e.length).filter(|&end| end <= blob.len() as u64).ok_or_else(|| {
            load_err(
                at,
                format!(
                    "tensor `{}` spans blob bytes {}..{} but the blob has {} bytes",
                    e.name,
                    e.offset,
                    e.offset.saturating_add(e.length),
                    blob.len()
                ),
            )
        })?;
        spans.push((e.offset, end, &e.name));
        let data = blob[e.offset as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(e.dims.clone(), data)
            .map_err(|err| load_err(at, format!("tensor `{}`: {err}", e.name)))?;
        if weights.insert(e.name.clone(), t).is_some() {
            return Err(load_err(at, format!("duplicate tensor `{}`", e.name)));
        }
    }
    spans.sort();
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(load_err(
                blob_start + pair[1].0,
                format!("tensors `{}` and `{}` overlap", pair[0].2, pair[1].2),
            ));
        }
    }
    Model::new(manifest.graph, weights)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    decode_model(&fs::read(path)?)
}

/// Contents of a TNS file.
#[derive(Debug, Clone, PartialEq)]
pub enum TnsData {
    F32(Tensor),
    U32 { dims: Vec<usize>, data: Vec<u32> },
}

impl TnsData {
    pub fn dims(&self) -> &[usize] {
        match self {
            TnsData::F32(t) => t.dims(),
            TnsData::U32 { dims, .. } => dims,
        }
    }

    pub fn into_f32(self) -> Result<Tensor> {
        match self {
            TnsData::F32(t) => Ok(t),
            TnsData::U32 { .. } => Err(Error::InvalidArgument("expected an f32 tensor, found u32".into())),
        }
    }

    pub fn into_u32(self) -> Result<Vec<u32>> {
        match self {
            TnsData::U32 { data, .. } => Ok(data),
            TnsData::F32(_) => Err(Error::InvalidArgument("expected a u32 tensor, found f32".into())),
        }
    }
}

pub fn encode_tns(t: &TnsData) -> Vec<u8> {
    let dims = t.dims();
    let mut out = Vec::new();
    out.extend_from_slice(TNS_MAGIC);
    let code: u32 = if matches!(t, TnsData::F32(_)) { 0 } else { 1 };
    out.extend_from_slice(&code.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match t {
        TnsData::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        TnsData::U32 { data, .. } => data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

pub fn decode_tns(bytes: &[u8]) -> Result<TnsData> {
    if bytes.len() < 12 || &bytes[..4] != TNS_MAGIC {
        return Err(load_err(0, "missing TNS1 header"));
    }
    let code = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let ndim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if code > 1 {
        return Err(load_err(4, format!("unknown dtype code {code}")));
    }
    let header = 12 + 8 * ndim;
    if ndim == 0 || bytes.len() < header {
        return Err(load_err(8, format!("cannot read {ndim} dims")));
    }
    let dims: Vec<usize> = bytes[12..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let expected = dims
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| load_err(12, format!("dims {dims:?} overflow")))?;
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(load_err(
            header as u64,
            format!("payload is {} bytes, expected {expected} for dims {dims:?}", payload.len()),
        ));
    }
    let words = payload.chunks_exact(4).map(|c| <[u8; 4]>::try_from(c).unwrap());
    if code == 0 {
        let data = words.map(f32::from_le_bytes).collect();
        Ok(TnsData::F32(Tensor::new(dims, data).map_err(|e| load_err(12, e.to_string()))?))
    } else {
        if dims.contains(&0) {
            return Err(load_err(12, format!("dims {dims:?} contain a zero extent")));
        }
        Ok(TnsData::U32 { dims, data: words.map(u32::from_le_bytes).collect() })
    }
}

pub fn save_tns(t: &TnsData, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_tns(t))?;
    Ok(())
}

pub fn load_tns(path: impl AsRef<Path>) -> Result<TnsData> {
    decode_tns(&fs::read(path)?)
}

/// Loads an f32 image tensor `(N, C, H, W)`.
pub fn load_images(path: impl AsRef<Path>) -> Result<Tensor> {
    let t = load_tns(path)?.into_f32()?;
    if t.dims().len() != 4 {
        return Err(Error::InvalidArgument(format!("image tensor must be NCHW, got {:?}", t.dims())));
    }
    Ok(t)
}

/// Loads a 1-d u32 label vector.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let t = load_tns(path)?;
    if t.dims().len() != 1 {
        return Err(Error::InvalidArgument(format!("label tensor must be 1-d, got {:?}", t.dims())));
    }
    t.into_u32()
}

/// Labels must pair one-to-one with the leading dim of the images.
pub fn check_pairing(images: &Tensor, labels: &[u32]) -> Result<()> {
    if images.batch() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} images",
            labels.len(),
            images.batch()
        )));
    }
    Ok(())
}
