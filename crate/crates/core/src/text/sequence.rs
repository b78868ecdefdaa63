use super::label::PunctLabel;

/// Word ids paired with the punctuation that follows each word.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct LabeledSequence {
    pub word_ids: Vec<usize>,
    pub labels: Vec<PunctLabel>,
}

impl LabeledSequence {
    pub fn new(word_ids: Vec<usize>, labels: Vec<PunctLabel>) -> Self {
        assert_eq!(word_ids.len(), labels.len(), "word/label length mismatch");
        LabeledSequence { word_ids, labels }
    }

    pub fn len(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }

    pub fn push(&mut self, id: usize, label: PunctLabel) {
        self.word_ids.push(id);
        self.labels.push(label);
    }

    /// Sub-sequence `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> LabeledSequence {
        LabeledSequence { word_ids: self.word_ids[start..end].to_vec(), labels: self.labels[start..end].to_vec() }
    }
}

/// Where a sequence or chunk came from. Dev data must never reach the
/// training batch or the generation seed pool.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Train,
    Dev,
    Test,
    SeedPool,
    Generated,
}
