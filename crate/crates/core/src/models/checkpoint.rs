//! Binary checkpoint: `PRRL`, version, metadata length, JSON metadata, then
//! every parameter as little-endian f32 in registration order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"PRRL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Tagger,
    Generator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub layout_id: String,
    pub step: u64,
}

pub fn write_checkpoint<F: Scalar, W: Write>(mut w: W, meta: &CheckpointMeta, params: &ParamStore<F>) -> Result<()> {
    if meta.layout_id != params.layout_id() {
        return Err(Error::LayoutMismatch { expected: params.layout_id(), found: meta.layout_id.clone() });
    }
    let json = serde_json::to_vec(meta)?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(params.num_scalars() * 4);
    for v in params.flatten_values() {
        buf.extend_from_slice(&(v.to_acc() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads the header and the flat parameter values.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(CheckpointMeta, Vec<f32>)> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head).map_err(|_| Error::Checkpoint("truncated header".into()))?;
    if &head[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let meta_len = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as usize;
    let mut json = vec![0u8; meta_len];
    r.read_exact(&mut json).map_err(|_| Error::Checkpoint("truncated metadata".into()))?;
    let meta: CheckpointMeta = serde_json::from_slice(&json)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() % 4 != 0 {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len() % 4)));
    }
    let values = rest.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok((meta, values))
}

/// Loads values into `params`, checking kind, layout and vocabulary.
pub fn restore<F: Scalar>(
    meta: &CheckpointMeta,
    values: &[f32],
    kind: ModelKind,
    vocab_hash: &str,
    params: &mut ParamStore<F>,
) -> Result<()> {
    if meta.kind != kind {
        return Err(Error::Checkpoint(format!("expected a {kind:?} checkpoint, found {:?}", meta.kind)));
    }
    if meta.vocab_hash != vocab_hash {
        return Err(Error::Checkpoint(format!("vocabulary hash {} does not match {vocab_hash}", meta.vocab_hash)));
    }
    if meta.layout_id != params.layout_id() {
        return Err(Error::LayoutMismatch { expected: params.layout_id(), found: meta.layout_id.clone() });
    }
    let values: Vec<F> = values.iter().map(|&v| F::from_acc(v as f64)).collect();
    params.load_flat(&values)
}

pub fn save_file<F: Scalar>(path: &Path, meta: &CheckpointMeta, params: &ParamStore<F>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(&mut w, meta, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_file(path: &Path) -> Result<(CheckpointMeta, Vec<f32>)> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}
