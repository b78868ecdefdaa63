//! Text data: labeling, augmentation, chunking, seed sampling and file I/O.

mod augment;
mod chunk;
mod ingest;
pub mod io;
mod label;
mod seed;
mod sequence;
mod vocab;

pub use augment::{AugmentStats, AugmentationConfig, Augmenter};
pub use chunk::{chunk, chunk_all, Chunk, ChunkOrigin};
pub use ingest::{ingest, render, tokenize};
pub use label::{PunctLabel, UnknownLabel};
pub use seed::{sample_seed, sample_seed_window};
pub use sequence::{LabeledSequence, Source};
pub use vocab::{Vocab, BOS, PAD, RESERVED, UNK};
