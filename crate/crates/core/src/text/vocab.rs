use std::collections::HashMap;
use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const RESERVED: [&str; 3] = ["<pad>", "<unk>", "<bos>"];

/// Dense word-level vocabulary with reserved ids 0..3.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<String>()).expect("reserved tokens are distinct")
    }
}

impl Vocab {
    /// Builds a vocabulary from the given non-reserved tokens, in order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab { tokens: Vec::new(), index: HashMap::new() };
        for t in RESERVED.iter().map(|s| s.to_string()).chain(tokens.into_iter().map(Into::into)) {
            if v.index.contains_key(&t) {
                return Err(Error::Config(format!("duplicate vocabulary token `{t}`")));
            }
            v.index.insert(t.clone(), v.tokens.len());
            v.tokens.push(t);
        }
        Ok(v)
    }

    /// Keeps words seen at least `min_freq` times, most frequent first
    /// (ties alphabetical), up to `max_size` ids including reserved ones.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>, min_freq: usize, max_size: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for w in words {
            *counts.entry(w).or_default() += 1;
        }
        let mut kept: Vec<(&str, usize)> =
            counts.into_iter().filter(|(w, c)| *c >= min_freq && !RESERVED.contains(w)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        kept.truncate(max_size.saturating_sub(RESERVED.len()));
        Self::from_tokens(kept.into_iter().map(|(w, _)| w)).expect("counted words are distinct")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(w, "{t}\t{i}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut tokens = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse { line: lineno, msg: "expected `token<TAB>id`".into() })?;
            let id: usize = id.parse().map_err(|_| Error::Parse { line: lineno, msg: format!("bad id `{id}`") })?;
            if id != tokens.len() {
                return Err(Error::Parse { line: lineno, msg: format!("id {id} out of order") });
            }
            if id < RESERVED.len() && tok != RESERVED[id] {
                return Err(Error::Parse { line: lineno, msg: format!("id {id} is reserved for `{}`", RESERVED[id]) });
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < RESERVED.len() {
            return Err(Error::Parse { line: tokens.len() + 1, msg: "missing reserved tokens".into() });
        }
        Self::from_tokens(tokens.into_iter().skip(RESERVED.len()))
            .map_err(|e| Error::Parse { line: 0, msg: e.to_string() })
    }

    /// Stable digest of the token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(*b"\n");
        }
        crate::short_hex(&h.finalize())
    }
}
