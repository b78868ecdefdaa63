//! Token-level precision, recall and F1 for the punctuation classes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ChunkBatch, Tagger};
use crate::scalar::Scalar;
use crate::text::{chunk, LabeledSequence, PunctLabel, Source};

/// Raw true-positive / false-positive / false-negative counts for the
/// three punctuation classes, indexed COMMA, PERIOD, QUESTION.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: [u64; 3],
    pub fp: [u64; 3],
    pub fn_: [u64; 3],
}

impl Counts {
    /// Adds one aligned pair of labels.
    pub fn observe(&mut self, gold: PunctLabel, pred: PunctLabel) {
        let slot = |l: PunctLabel| l.index().checked_sub(1);
        if gold == pred {
            if let Some(k) = slot(gold) {
                self.tp[k] += 1;
            }
            return;
        }
        if let Some(k) = slot(gold) {
            self.fn_[k] += 1;
        }
        if let Some(k) = slot(pred) {
            self.fp[k] += 1;
        }
    }

    pub fn merge(&mut self, other: &Counts) {
        for k in 0..3 {
            self.tp[k] += other.tp[k];
            self.fp[k] += other.fp[k];
            self.fn_[k] += other.fn_[k];
        }
    }

    pub fn metrics(&self) -> Metrics {
        let class = |k: usize| ClassMetrics::from_counts(self.tp[k], self.fp[k], self.fn_[k]);
        let sum = |a: &[u64; 3]| a.iter().sum();
        Metrics {
            comma: class(0),
            period: class(1),
            question: class(2),
            overall: ClassMetrics::from_counts(sum(&self.tp), sum(&self.fp), sum(&self.fn_)),
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassMetrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        ClassMetrics { tp, fp, fn_, precision, recall, f1 }
    }
}

/// Per-class scores and the micro average over the three marks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "COMMA")]
    pub comma: ClassMetrics,
    #[serde(rename = "PERIOD")]
    pub period: ClassMetrics,
    #[serde(rename = "QUESTION")]
    pub question: ClassMetrics,
    pub overall: ClassMetrics,
}

impl Metrics {
    pub fn class(&self, label: PunctLabel) -> Option<&ClassMetrics> {
        match label {
            PunctLabel::None => None,
            PunctLabel::Comma => Some(&self.comma),
            PunctLabel::Period => Some(&self.period),
            PunctLabel::Question => Some(&self.question),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Counts for position-aligned label sequences.
pub fn count(gold: &[PunctLabel], pred: &[PunctLabel]) -> Result<Counts> {
    if gold.len() != pred.len() {
        return Err(Error::Alignment { gold: gold.len(), pred: pred.len() });
    }
    let mut c = Counts::default();
    for (&g, &p) in gold.iter().zip(pred) {
        c.observe(g, p);
    }
    Ok(c)
}

pub fn score(gold: &[PunctLabel], pred: &[PunctLabel]) -> Result<Metrics> {
    Ok(count(gold, pred)?.metrics())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Chunks a sequence, tags every chunk and reassembles one label per word.
pub fn predict_sequence<F: Scalar>(
    tagger: &Tagger<F>,
    seq: &LabeledSequence,
    core_size: usize,
    context: usize,
) -> Result<Vec<PunctLabel>> {
    let mut out = predict_batch(tagger, std::slice::from_ref(seq), core_size, context, usize::MAX)?;
    Ok(out.pop().expect("one sequence"))
}

/// Predictions for many sequences, running at most `batch_chunks` chunks
/// per forward pass. Empty sequences yield empty predictions.
pub fn predict_batch<F: Scalar>(
    tagger: &Tagger<F>,
    seqs: &[LabeledSequence],
    core_size: usize,
    context: usize,
    batch_chunks: usize,
) -> Result<Vec<Vec<PunctLabel>>> {
    let mut chunks = Vec::new();
    for (i, s) in seqs.iter().enumerate().filter(|(_, s)| !s.is_empty()) {
        chunks.extend(chunk(s, core_size, context, Source::Test, i)?);
    }
    let mut out: Vec<Vec<PunctLabel>> = seqs.iter().map(|s| vec![PunctLabel::None; s.len()]).collect();
    for group in chunks.chunks(batch_chunks.max(1)) {
        let logits = tagger.forward(&ChunkBatch::from_chunks(group))?;
        let (w, c) = (logits.shape()[1], logits.shape()[2]);
        for (b, ch) in group.iter().enumerate() {
            let offset = ch.core_offset();
            for k in 0..ch.core_len() {
                let t = offset + k;
                let row = &logits.data()[(b * w + t) * c..(b * w + t + 1) * c];
                out[ch.origin.sequence_id][ch.origin.core_start + k] =
                    PunctLabel::from_index(argmax(row)).expect("four classes");
            }
        }
    }
    Ok(out)
}

/// Scores a tagger on a labeled dataset.
pub fn evaluate<F: Scalar>(
    tagger: &Tagger<F>,
    seqs: &[LabeledSequence],
    core_size: usize,
    context: usize,
) -> Result<Metrics> {
    let preds = predict_batch(tagger, seqs, core_size, context, 32)?;
    let mut total = Counts::default();
    for (s, p) in seqs.iter().zip(&preds) {
        total.merge(&count(&s.labels, p)?);
    }
    Ok(total.metrics())
}
