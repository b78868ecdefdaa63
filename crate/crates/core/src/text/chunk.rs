//! Fixed-size chunking with flanking context.

use super::label::PunctLabel;
use super::sequence::{LabeledSequence, Source};
use crate::error::{Error, Result};

/// Identifies the span of a source sequence a chunk predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChunkOrigin {
    pub source: Source,
    pub sequence_id: usize,
    pub core_start: usize,
    pub core_end: usize,
}

/// A training/inference window: up to `context` words on each side of a
/// core span, with the loss mask set only on core positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub token_ids: Vec<usize>,
    pub labels: Vec<PunctLabel>,
    pub loss_mask: Vec<bool>,
    pub origin: ChunkOrigin,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Offset of the first core position within the window.
    pub fn core_offset(&self) -> usize {
        self.loss_mask.iter().position(|&m| m).unwrap_or(0)
    }

    pub fn core_len(&self) -> usize {
        self.origin.core_end - self.origin.core_start
    }
}

/// Tiles `seq` into cores of `core_size` words (the last may be shorter) and
/// attaches up to `context` neighbouring words on each side.
pub fn chunk(
    seq: &LabeledSequence,
    core_size: usize,
    context: usize,
    source: Source,
    sequence_id: usize,
) -> Result<Vec<Chunk>> {
    if seq.is_empty() {
        return Err(Error::EmptyInput("cannot chunk an empty sequence"));
    }
    if core_size == 0 {
        return Err(Error::Config("core_size must be at least 1".into()));
    }
    let n = seq.len();
    let mut chunks = Vec::with_capacity(n.div_ceil(core_size));
    let mut core_start = 0;
    while core_start < n {
        let core_end = (core_start + core_size).min(n);
        let lo = core_start.saturating_sub(context);
        let hi = (core_end + context).min(n);
        let loss_mask = (lo..hi).map(|i| (core_start..core_end).contains(&i)).collect();
        chunks.push(Chunk {
            token_ids: seq.word_ids[lo..hi].to_vec(),
            labels: seq.labels[lo..hi].to_vec(),
            loss_mask,
            origin: ChunkOrigin { source, sequence_id, core_start, core_end },
        });
        core_start = core_end;
    }
    Ok(chunks)
}

/// Chunks every sequence, numbering them in order.
pub fn chunk_all(seqs: &[LabeledSequence], core_size: usize, context: usize, source: Source) -> Result<Vec<Chunk>> {
    let mut out = Vec::new();
    for (i, s) in seqs.iter().enumerate().filter(|(_, s)| !s.is_empty()) {
        out.extend(chunk(s, core_size, context, source, i)?);
    }
    Ok(out)
}
