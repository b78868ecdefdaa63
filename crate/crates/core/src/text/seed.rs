use rand::Rng;

use super::sequence::LabeledSequence;
use crate::error::{Error, Result};

/// Draws a window of `seed_len` consecutive words, uniform over every
/// eligible `(sequence, start)` pair. Returns `(sequence index, start)`.
pub fn sample_seed_window<R: Rng + ?Sized>(
    pool: &[LabeledSequence],
    seed_len: usize,
    rng: &mut R,
) -> Result<(usize, usize)> {
    if seed_len == 0 {
        return Err(Error::Config("seed_len must be at least 1".into()));
    }
    let starts = |s: &LabeledSequence| (s.len() + 1).saturating_sub(seed_len);
    let total: usize = pool.iter().map(starts).sum();
    if total == 0 {
        return Err(Error::PoolTooShort { seed_len });
    }
    let mut r = rng.gen_range(0..total);
    for (i, s) in pool.iter().enumerate() {
        let n = starts(s);
        if r < n {
            return Ok((i, r));
        }
        r -= n;
    }
    unreachable!("draw is below the total number of starts")
}

/// Word ids of a uniformly drawn seed window.
pub fn sample_seed<R: Rng + ?Sized>(pool: &[LabeledSequence], seed_len: usize, rng: &mut R) -> Result<Vec<usize>> {
    let (i, start) = sample_seed_window(pool, seed_len, rng)?;
    Ok(pool[i].word_ids[start..start + seed_len].to_vec())
}
