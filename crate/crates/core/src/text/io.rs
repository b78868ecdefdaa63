//! Dataset files: one `word<TAB>LABEL` per line, blank line between
//! sequences.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::label::PunctLabel;
use super::sequence::LabeledSequence;
use super::vocab::Vocab;
use crate::error::{Error, Result};

/// A sequence of surface words with labels, before vocabulary lookup.
pub type WordSequence = Vec<(String, PunctLabel)>;

pub fn write_words<W: Write>(mut w: W, seqs: &[WordSequence]) -> Result<()> {
    for (i, s) in seqs.iter().enumerate() {
        if i > 0 {
            writeln!(w)?;
        }
        for (word, label) in s {
            writeln!(w, "{word}\t{label}")?;
        }
    }
    Ok(())
}

pub fn write_dataset<W: Write>(w: W, seqs: &[LabeledSequence], vocab: &Vocab) -> Result<()> {
    let words: Vec<WordSequence> = seqs
        .iter()
        .map(|s| {
            s.word_ids
                .iter()
                .zip(&s.labels)
                .map(|(&id, &l)| (vocab.token(id).unwrap_or("<unk>").to_string(), l))
                .collect()
        })
        .collect();
    write_words(w, &words)
}

pub fn read_words<R: BufRead>(r: R) -> Result<Vec<WordSequence>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            continue;
        }
        let (word, label) = line
            .split_once('\t')
            .ok_or_else(|| Error::Parse { line: lineno, msg: "expected `word<TAB>LABEL`".into() })?;
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(Error::Parse { line: lineno, msg: format!("invalid word `{word}`") });
        }
        let label: PunctLabel =
            label.trim_end_matches('\r').parse().map_err(|e| Error::Parse { line: lineno, msg: format!("{e}") })?;
        current.push((word.to_string(), label));
    }
    if !current.is_empty() {
        out.push(current);
    }
    Ok(out)
}

pub fn read_dataset<R: BufRead>(r: R, vocab: &Vocab) -> Result<Vec<LabeledSequence>> {
    Ok(read_words(r)?.iter().map(|s| words_to_sequence(s, vocab)).collect())
}

pub fn words_to_sequence(words: &[(String, PunctLabel)], vocab: &Vocab) -> LabeledSequence {
    let mut seq = LabeledSequence::default();
    for (w, l) in words {
        seq.push(vocab.id(w), *l);
    }
    seq
}

pub fn load_dataset(path: &Path, vocab: &Vocab) -> Result<Vec<LabeledSequence>> {
    read_dataset(BufReader::new(File::open(path)?), vocab)
}

pub fn load_words(path: &Path) -> Result<Vec<WordSequence>> {
    read_words(BufReader::new(File::open(path)?))
}

pub fn save_words(path: &Path, seqs: &[WordSequence]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_words(&mut w, seqs)?;
    w.flush()?;
    Ok(())
}

pub fn save_dataset(path: &Path, seqs: &[LabeledSequence], vocab: &Vocab) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, seqs, vocab)?;
    w.flush()?;
    Ok(())
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    Vocab::read(BufReader::new(File::open(path)?))
}

pub fn save_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    vocab.write(&mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use PunctLabel::*;

    #[test]
    fn parses_single_line() {
        let seqs = read_words("hello\tCOMMA\n".as_bytes()).unwrap();
        assert_eq!(seqs, vec![vec![("hello".to_string(), Comma)]]);
    }

    #[test]
    fn unknown_label_reports_line() {
        match read_words("a\tNONE\nb\tEXCLAIM\n".as_bytes()) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("EXCLAIM"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_tab_is_an_error() {
        assert!(matches!(read_words("a NONE\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn sequences_round_trip_through_text() {
        let vocab = Vocab::from_tokens(["a", "b", "c"]).unwrap();
        let seqs = vec![
            LabeledSequence::new(vec![3, 4, 1], vec![None, Comma, Period]),
            LabeledSequence::new(vec![5], vec![Question]),
        ];
        let mut buf = Vec::new();
        write_dataset(&mut buf, &seqs, &vocab).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "a\tNONE\nb\tCOMMA\n<unk>\tPERIOD\n\nc\tQUESTION\n");
        assert_eq!(read_dataset(&buf[..], &vocab).unwrap(), seqs);
    }
}
