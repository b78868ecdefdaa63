//! Conversion between punctuated text and labeled sequences.

use super::label::PunctLabel;
use super::sequence::LabeledSequence;
use super::vocab::Vocab;
use crate::error::{Error, Result};

/// Splits punctuated text into lowercased words, each paired with the first
/// punctuation mark that follows it.
///
/// Marks `, . ? ! ;` detach from words. A run of marks with no word between
/// them keeps only its first mark; marks before the first word are dropped.
pub fn tokenize(text: &str) -> Vec<(String, PunctLabel)> {
    let mut out: Vec<(String, PunctLabel)> = Vec::new();
    // Whether the most recent word has already received its mark.
    let mut marked = true;
    for raw in text.split_whitespace() {
        let mut word = String::new();
        for c in raw.chars() {
            match PunctLabel::from_mark(c) {
                Some(label) => {
                    if !word.is_empty() {
                        out.push((std::mem::take(&mut word), PunctLabel::None));
                        marked = false;
                    }
                    if !marked {
                        if let Some(last) = out.last_mut() {
                            last.1 = label;
                        }
                        marked = true;
                    }
                }
                None => word.extend(c.to_lowercase()),
            }
        }
        if !word.is_empty() {
            out.push((word, PunctLabel::None));
            marked = false;
        }
    }
    out
}

/// Parses punctuated text into a labeled sequence; unknown words map to
/// `<unk>`.
pub fn ingest(text: &str, vocab: &Vocab) -> Result<LabeledSequence> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::EmptyInput("text contains no words"));
    }
    let mut seq = LabeledSequence::default();
    for (w, l) in tokens {
        seq.push(vocab.id(&w), l);
    }
    Ok(seq)
}

/// Renders a labeled sequence as punctuated text, e.g. `hello, world.`.
pub fn render(seq: &LabeledSequence, vocab: &Vocab) -> String {
    let mut out = String::new();
    for (i, (&id, &label)) in seq.word_ids.iter().zip(&seq.labels).enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(vocab.token(id).unwrap_or("<unk>"));
        if let Some(m) = label.mark() {
            out.push(m);
        }
    }
    out
}
