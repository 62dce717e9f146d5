//! Cognate pair files and train/validation/test splits.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::nfc;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CognatePair {
    pub source: String,
    pub target: String,
}

impl CognatePair {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        CognatePair {
            source: source.into(),
            target: target.into(),
        }
    }
}

/// Parses `source<TAB>target` lines. Blank lines are skipped, duplicates
/// kept, and both sides NFC-normalised.
pub fn parse_cognate_tsv(text: &str) -> Result<Vec<CognatePair>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: &str| Error::Parse {
            line: i + 1,
            message: message.to_string(),
        };
        let mut fields = line.split('\t');
        let (Some(s), Some(t), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(err("expected exactly two tab-separated fields"));
        };
        let (s, t) = (s.trim(), t.trim());
        if s.is_empty() || t.is_empty() {
            return Err(err("empty source or target"));
        }
        pairs.push(CognatePair::new(nfc(s), nfc(t)));
    }
    Ok(pairs)
}

pub fn load_cognate_tsv(path: impl AsRef<Path>) -> Result<Vec<CognatePair>> {
    parse_cognate_tsv(&fs::read_to_string(path)?)
}

pub fn write_cognate_tsv<W: Write>(mut w: W, pairs: &[CognatePair]) -> Result<()> {
    for p in pairs {
        writeln!(w, "{}\t{}", p.source, p.target)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<CognatePair>,
    pub validation: Vec<CognatePair>,
    pub test: Vec<CognatePair>,
    pub seed: u64,
}

/// Sizes `(train, validation, test)` for `n` items: a quarter (rounded
/// down) is held out for testing; of the rest, nine tenths (rounded half
/// up) are kept for training and the remainder is validation.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = n / 4;
    let rest = n - test;
    let train = (9 * rest + 5) / 10;
    (train, rest - train, test)
}

/// Shuffles with `seed` and cuts test, validation and train in that order.
pub fn split_dataset(pairs: &[CognatePair], seed: u64) -> Result<DatasetSplit> {
    if pairs.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 pairs to split, got {}",
            pairs.len()
        )));
    }
    let mut shuffled = pairs.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (_, n_val, n_test) = split_sizes(pairs.len());
    let test = shuffled.split_off(shuffled.len() - n_test);
    let validation = shuffled.split_off(shuffled.len() - n_val);
    Ok(DatasetSplit {
        train: shuffled,
        validation,
        test,
        seed,
    })
}

/// Re-draws the validation part of `pool` (train + validation) with a new
/// seed, keeping `fraction` of it for validation (rounded half up).
pub fn resplit_validation(
    pool: &[CognatePair],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<CognatePair>, Vec<CognatePair>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction {fraction} outside [0, 1)"
        )));
    }
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (pool.len() as f64 * fraction + 0.5).floor() as usize;
    let validation = shuffled.split_off(shuffled.len() - n_val.min(shuffled.len()));
    Ok((shuffled, validation))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_examples() {
        assert_eq!(parse_cognate_tsv("a\tb\nc\td\n").unwrap().len(), 2);
        assert!(matches!(
            parse_cognate_tsv("a\tb\nmissing\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        let dup = parse_cognate_tsv("a\tb\n\na\tb\n").unwrap();
        assert_eq!(dup.len(), 2);
        assert_eq!(dup[0], dup[1]);
    }

    #[test]
    fn split_size_examples() {
        assert_eq!(split_sizes(4220), (2849, 316, 1055));
        assert_eq!(split_sizes(4), (3, 0, 1));
    }

    #[test]
    fn split_is_seeded_and_partitions() {
        let pairs: Vec<CognatePair> = (0..40)
            .map(|i| CognatePair::new(format!("s{i}"), format!("t{i}")))
            .collect();
        let a = split_dataset(&pairs, 3).unwrap();
        assert_eq!(a, split_dataset(&pairs, 3).unwrap());
        let mut all: Vec<_> = a
            .train
            .iter()
            .chain(&a.validation)
            .chain(&a.test)
            .cloned()
            .collect();
        all.sort_by(|x, y| x.source.cmp(&y.source));
        let mut want = pairs.clone();
        want.sort_by(|x, y| x.source.cmp(&y.source));
        assert_eq!(all, want);
        assert!(split_dataset(&pairs[..3], 0).is_err());
    }
}
