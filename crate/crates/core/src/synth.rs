//! Rule-generated cognate pairs over a WX alphabet.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::CognatePair;
use crate::error::{Error, Result};

pub const VOWELS: &[char] = &['a', 'A', 'i', 'I', 'u', 'U', 'e', 'E', 'o', 'O'];
pub const CONSONANTS: &[char] = &[
    'k', 'K', 'g', 'G', 'c', 'C', 'j', 'J', 't', 'T', 'd', 'D', 'N', 'w', 'W', 'x', 'X', 'n', 'p',
    'P', 'b', 'B', 'm', 'y', 'r', 'l', 'v', 'S', 's',
];
pub const ANUSVARA: char = 'M';

/// All 40 symbols words are drawn from.
pub fn alphabet() -> Vec<char> {
    VOWELS
        .iter()
        .chain(CONSONANTS)
        .copied()
        .chain(std::iter::once(ANUSVARA))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    Initial,
    Final,
    Anywhere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteRule {
    pub anchor: Anchor,
    pub from: String,
    pub to: String,
    /// Chance that the generator applies the rule at a match.
    pub probability: f64,
}

impl RewriteRule {
    pub fn new(anchor: Anchor, from: &str, to: &str) -> Self {
        RewriteRule {
            anchor,
            from: from.into(),
            to: to.into(),
            probability: 1.0,
        }
    }

    fn apply_with(&self, word: &str, mut fire: impl FnMut() -> bool) -> String {
        if self.from.is_empty() {
            return word.to_string();
        }
        match self.anchor {
            Anchor::Initial => match word.strip_prefix(self.from.as_str()) {
                Some(rest) if fire() => format!("{}{rest}", self.to),
                _ => word.to_string(),
            },
            Anchor::Final => match word.strip_suffix(self.from.as_str()) {
                Some(rest) if fire() => format!("{rest}{}", self.to),
                _ => word.to_string(),
            },
            Anchor::Anywhere => {
                let mut out = String::with_capacity(word.len());
                let mut rest = word;
                while let Some(at) = rest.find(self.from.as_str()) {
                    out.push_str(&rest[..at]);
                    out.push_str(if fire() { &self.to } else { &self.from });
                    rest = &rest[at + self.from.len()..];
                }
                out.push_str(rest);
                out
            }
        }
    }

    /// Applies the rule at every match, ignoring `probability`.
    pub fn apply(&self, word: &str) -> String {
        self.apply_with(word, || true)
    }
}

/// Initial y to j, final nA to lA, anusvara to n.
pub fn default_rules() -> Vec<RewriteRule> {
    vec![
        RewriteRule::new(Anchor::Initial, "y", "j"),
        RewriteRule::new(Anchor::Final, "nA", "lA"),
        RewriteRule::new(Anchor::Anywhere, "M", "n"),
    ]
}

/// Applies `rules` in order, each at every match.
pub fn oracle_transduce(word: &str, rules: &[RewriteRule]) -> String {
    rules.iter().fold(word.to_string(), |w, r| r.apply(&w))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub min_len: usize,
    pub max_len: usize,
    /// Share of pairs whose source no rule touches.
    pub identity_fraction: f64,
    /// Chance that a word is built to start with `y`.
    pub initial_y_rate: f64,
    /// Chance that a word is built to end in `nA`.
    pub final_na_rate: f64,
    /// Chance of an anusvara after each syllable.
    pub anusvara_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            min_len: 2,
            max_len: 12,
            identity_fraction: 0.1,
            initial_y_rate: 0.2,
            final_na_rate: 0.2,
            anusvara_rate: 0.08,
        }
    }
}

/// A random syllabic word of exactly `len` symbols.
pub fn random_word<R: Rng + ?Sized>(rng: &mut R, len: usize, cfg: &SynthConfig) -> String {
    let mut w: Vec<char> = Vec::with_capacity(len + 3);
    if rng.gen_bool(cfg.initial_y_rate) {
        w.push('y');
        w.push(VOWELS[rng.gen_range(0..VOWELS.len())]);
    }
    while w.len() < len {
        if rng.gen_bool(0.85) {
            w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())]);
        }
        w.push(VOWELS[rng.gen_range(0..VOWELS.len())]);
        if rng.gen_bool(cfg.anusvara_rate) {
            w.push(ANUSVARA);
        }
    }
    w.truncate(len);
    if len >= 4 && rng.gen_bool(cfg.final_na_rate) {
        w[len - 2] = 'n';
        w[len - 1] = 'A';
    }
    w.into_iter().collect()
}

pub fn generate_pairs(seed: u64, n: usize, rules: &[RewriteRule]) -> Result<Vec<CognatePair>> {
    generate_pairs_with(seed, n, rules, &SynthConfig::default())
}

/// `n` pairs whose targets are the sources rewritten by `rules`. A share
/// `identity_fraction` of pairs is drawn from words that no rule changes.
pub fn generate_pairs_with(
    seed: u64,
    n: usize,
    rules: &[RewriteRule],
    cfg: &SynthConfig,
) -> Result<Vec<CognatePair>> {
    if rules.is_empty() {
        return Err(Error::InvalidArgument("empty rule set".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if cfg.min_len < 1 || cfg.min_len > cfg.max_len {
        return Err(Error::InvalidArgument(format!(
            "bad length range {}..={}",
            cfg.min_len, cfg.max_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    while pairs.len() < n {
        let identity = rng.gen_bool(cfg.identity_fraction);
        let len = rng.gen_range(cfg.min_len..=cfg.max_len);
        let source = random_word(&mut rng, len, cfg);
        let target = if rules.iter().all(|r| r.probability >= 1.0) {
            oracle_transduce(&source, rules)
        } else {
            rules.iter().fold(source.clone(), |w, r| {
                r.apply_with(&w, || rng.gen_bool(r.probability.clamp(0.0, 1.0)))
            })
        };
        if identity && target != source {
            continue;
        }
        pairs.push(CognatePair { source, target });
    }
    Ok(pairs)
}
