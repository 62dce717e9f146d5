//! Fixing out-of-vocabulary words in sentence translations with a word
//! transducer.
//!
//! A baseline translation comes with the attention matrix its translator
//! produced. Source words outside a frequency shortlist are OOV; every
//! target token whose attention row peaks on an OOV source word is replaced
//! by the transduction of that word.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::CognatePair;
use crate::error::{Error, Result};
use crate::metrics::corpus_bleu;
use crate::models::{Architecture, AttentionMatrix, Model};
use crate::text::{strip_trailing_repeats, Script};
use crate::Real;

/// Largest deviation of an attention row sum from 1 that is accepted.
pub const ROW_SUM_TOLERANCE: f64 = 1e-3;

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '।' | '॥' | '“' | '”' | '‘' | '’')
}

fn punct_only(token: &str) -> bool {
    !token.is_empty() && token.chars().all(is_punct)
}

/// Splits on whitespace and detaches leading and trailing punctuation
/// (including the danda) into tokens of their own.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in sentence.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let start = chars
            .iter()
            .position(|&c| !is_punct(c))
            .unwrap_or(chars.len());
        let end = chars
            .iter()
            .rposition(|&c| !is_punct(c))
            .map_or(start, |e| e + 1);
        out.extend(chars[..start].iter().map(|c| c.to_string()));
        if start < end {
            out.push(chars[start..end].iter().collect());
        }
        out.extend(chars[end.max(start)..].iter().map(|c| c.to_string()));
    }
    out
}

/// Joins tokens with spaces, attaching punctuation to the preceding word.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut s = String::new();
    for t in tokens {
        let t = t.as_ref();
        if !s.is_empty() && !punct_only(t) {
            s.push(' ');
        }
        s.push_str(t);
    }
    s
}

/// The `k` most frequent words of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyShortlist {
    pub k: usize,
    /// Most frequent first; ties in lexicographic order.
    pub entries: Vec<(String, u64)>,
    #[serde(skip)]
    members: HashSet<String>,
}

impl FrequencyShortlist {
    pub fn contains(&self, word: &str) -> bool {
        self.members.contains(word)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// A shortlist with no words: everything is OOV.
    pub fn empty() -> Self {
        FrequencyShortlist {
            k: 0,
            entries: Vec::new(),
            members: HashSet::new(),
        }
    }
}

pub fn build_shortlist<S: AsRef<str>>(tokens: &[S], k: usize) -> Result<FrequencyShortlist> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "shortlist size must be at least 1".into(),
        ));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for t in tokens {
        let t = t.as_ref();
        if !punct_only(t) {
            *counts.entry(t).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyInput("corpus has no words".into()));
    }
    let mut entries: Vec<(String, u64)> = counts
        .into_iter()
        .map(|(w, c)| (w.to_string(), c))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(k);
    let members = entries.iter().map(|(w, _)| w.clone()).collect();
    Ok(FrequencyShortlist {
        k,
        entries,
        members,
    })
}

/// Positions of words outside the shortlist. Punctuation is never OOV.
pub fn detect_oov<S: AsRef<str>>(tokens: &[S], shortlist: &FrequencyShortlist) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| !punct_only(t.as_ref()) && !shortlist.contains(t.as_ref()))
        .map(|(i, _)| i)
        .collect()
}

/// For each source column, the target rows whose largest weight falls on it
/// (lowest column on ties).
pub fn align_from_attention(att: &AttentionMatrix) -> Result<Vec<Vec<usize>>> {
    let mut aligned = vec![Vec::new(); att.cols];
    for i in 0..att.rows {
        let row = att.row(i);
        let sum: Real = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE || row.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidAttention(format!("row {i} sums to {sum}")));
        }
        if att.cols == 0 {
            return Err(Error::InvalidAttention(
                "attention has no source columns".into(),
            ));
        }
        aligned[crate::models::argmax(row)].push(i);
    }
    Ok(aligned)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedSentencePair {
    pub source: Vec<String>,
    pub baseline: Vec<String>,
    /// Baseline tokens by source tokens.
    pub attention: AttentionMatrix,
    /// Target positions per source position.
    pub alignment: Vec<Vec<usize>>,
}

impl AlignedSentencePair {
    pub fn new(
        source: Vec<String>,
        baseline: Vec<String>,
        attention: AttentionMatrix,
    ) -> Result<Self> {
        if attention.rows != baseline.len() || attention.cols != source.len() {
            return Err(Error::InvalidAttention(format!(
                "{}x{} attention for {} target and {} source tokens",
                attention.rows,
                attention.cols,
                baseline.len(),
                source.len()
            )));
        }
        let alignment = align_from_attention(&attention)?;
        Ok(AlignedSentencePair {
            source,
            baseline,
            attention,
            alignment,
        })
    }
}

/// Something that maps one word to its cognate.
pub trait WordTransducer: Sync {
    fn transduce_word(&self, word: &str) -> Result<String>;
}

impl<F: Fn(&str) -> Result<String> + Sync> WordTransducer for F {
    fn transduce_word(&self, word: &str) -> Result<String> {
        self(word)
    }
}

/// A trained model as a word transducer; HAN output has trailing repeats
/// stripped.
pub struct ModelTransducer<'a> {
    pub model: &'a Model,
    pub script: Script,
}

impl WordTransducer for ModelTransducer<'_> {
    fn transduce_word(&self, word: &str) -> Result<String> {
        let out = self.model.transduce_greedy(word)?.output;
        Ok(if self.model.config.architecture == Architecture::Han {
            strip_trailing_repeats(&out, self.script)
        } else {
            out
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Correction {
    pub tokens: Vec<String>,
    /// Baseline positions that were replaced or merged away.
    pub changed: Vec<usize>,
    /// OOV source positions no target token is aligned to.
    pub unaligned: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Replaces the target tokens aligned to each OOV source word by its
/// transduction. When several target tokens align to one source word, the
/// first takes the transduction and the rest are dropped.
pub fn correct_translation(
    pair: &AlignedSentencePair,
    oov: &[usize],
    transducer: &dyn WordTransducer,
) -> Correction {
    let mut replacement: BTreeMap<usize, Option<String>> = BTreeMap::new();
    let mut out = Correction::default();
    for &s in oov {
        let Some(targets) = pair.alignment.get(s) else {
            continue;
        };
        if targets.is_empty() {
            out.unaligned.push(s);
            out.warnings.push(format!(
                "OOV word `{}` at {s} is aligned to no target token",
                pair.source[s]
            ));
            continue;
        }
        match transducer.transduce_word(&pair.source[s]) {
            Ok(word) => {
                replacement.insert(targets[0], Some(word));
                for &t in &targets[1..] {
                    replacement.insert(t, None);
                }
            }
            Err(e) => out
                .warnings
                .push(format!("could not transduce `{}`: {e}", pair.source[s])),
        }
    }
    for w in &out.warnings {
        warn!("{w}");
    }
    for (i, tok) in pair.baseline.iter().enumerate() {
        match replacement.get(&i) {
            Some(Some(word)) => {
                if word != tok {
                    out.changed.push(i);
                }
                out.tokens.push(word.clone());
            }
            Some(None) => out.changed.push(i),
            None => out.tokens.push(tok.clone()),
        }
    }
    out
}

/// One sentence of pipeline input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub source: Vec<String>,
    pub baseline: Vec<String>,
    pub attention: AttentionMatrix,
    pub reference: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRow {
    pub k: usize,
    pub baseline_bleu: f64,
    pub corrected_bleu: f64,
    pub delta: f64,
    pub oov_tokens: usize,
    pub changed_tokens: usize,
}

/// Corrects every record against one shortlist.
pub fn correct_all(
    records: &[SentenceRecord],
    shortlist: &FrequencyShortlist,
    transducer: &dyn WordTransducer,
) -> Result<Vec<Correction>> {
    records
        .iter()
        .map(|r| {
            let pair = AlignedSentencePair::new(
                r.source.clone(),
                r.baseline.clone(),
                r.attention.clone(),
            )?;
            Ok(correct_translation(
                &pair,
                &detect_oov(&r.source, shortlist),
                transducer,
            ))
        })
        .collect()
}

/// Baseline and corrected corpus BLEU for each shortlist size.
pub fn evaluate_pipeline<S: AsRef<str>>(
    records: &[SentenceRecord],
    monolingual: &[S],
    sizes: &[usize],
    transducer: &dyn WordTransducer,
) -> Result<Vec<PipelineRow>> {
    let refs: Vec<Vec<String>> = records
        .iter()
        .map(|r| r.reference.clone())
        .collect::<Option<_>>()
        .ok_or_else(|| Error::InvalidArgument("every sentence needs a reference".into()))?;
    let baselines: Vec<Vec<String>> = records.iter().map(|r| r.baseline.clone()).collect();
    let baseline_bleu = corpus_bleu(&baselines, &refs)?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &k in sizes {
        let shortlist = build_shortlist(monolingual, k)?;
        let corrections = correct_all(records, &shortlist, transducer)?;
        let corrected: Vec<Vec<String>> = corrections.iter().map(|c| c.tokens.clone()).collect();
        let corrected_bleu = corpus_bleu(&corrected, &refs)?;
        rows.push(PipelineRow {
            k,
            baseline_bleu,
            corrected_bleu,
            delta: corrected_bleu - baseline_bleu,
            oov_tokens: records
                .iter()
                .map(|r| detect_oov(&r.source, &shortlist).len())
                .sum(),
            changed_tokens: corrections.iter().map(|c| c.changed.len()).sum(),
        });
    }
    Ok(rows)
}

pub fn format_pipeline_table(rows: &[PipelineRow]) -> String {
    let mut s = String::from("K\tbaseline BLEU\tcorrected BLEU\tdelta\tOOV tokens\tchanged\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{:.2}\t{:.2}\t{:+.2}\t{}\t{}\n",
            r.k, r.baseline_bleu, r.corrected_bleu, r.delta, r.oov_tokens, r.changed_tokens
        ));
    }
    s
}

/// Parses the pipeline TSV (`source<TAB>baseline[<TAB>reference]`, tokens
/// space-separated) and its attention sidecar (one line per sentence:
/// `rows cols` followed by the row-major weights).
pub fn parse_pipeline_input(tsv: &str, sidecar: &str) -> Result<Vec<SentenceRecord>> {
    let mut matrices = sidecar
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let mut records = Vec::new();
    for (i, line) in tsv.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let perr = |m: String| Error::Parse {
            line: i + 1,
            message: m,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(perr(
                "expected source, baseline and optional reference columns".into(),
            ));
        }
        let (j, mline) = matrices
            .next()
            .ok_or_else(|| perr("no attention matrix for this sentence".into()))?;
        let merr = |m: String| Error::Parse {
            line: j + 1,
            message: format!("attention: {m}"),
        };
        let nums: Vec<&str> = mline.split_whitespace().collect();
        if nums.len() < 2 {
            return Err(merr("missing dimensions".into()));
        }
        let rows: usize = nums[0].parse().map_err(|_| merr("bad row count".into()))?;
        let cols: usize = nums[1]
            .parse()
            .map_err(|_| merr("bad column count".into()))?;
        let data = nums[2..]
            .iter()
            .map(|x| {
                x.parse::<f64>()
                    .map_err(|_| merr(format!("bad weight `{x}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let attention = AttentionMatrix::new(rows, cols, data).map_err(|e| merr(e.to_string()))?;
        records.push(SentenceRecord {
            source: tokenize(fields[0]),
            baseline: tokenize(fields[1]),
            attention,
            reference: fields.get(2).map(|r| tokenize(r)),
        });
    }
    Ok(records)
}

pub fn load_pipeline_input(
    tsv: impl AsRef<Path>,
    sidecar: impl AsRef<Path>,
) -> Result<Vec<SentenceRecord>> {
    parse_pipeline_input(&fs::read_to_string(tsv)?, &fs::read_to_string(sidecar)?)
}

/// The records in the TSV and sidecar formats.
pub fn format_pipeline_input(records: &[SentenceRecord]) -> (String, String) {
    let mut tsv = String::new();
    let mut att = String::new();
    for r in records {
        tsv.push_str(&r.source.join(" "));
        tsv.push('\t');
        tsv.push_str(&r.baseline.join(" "));
        if let Some(reference) = &r.reference {
            tsv.push('\t');
            tsv.push_str(&reference.join(" "));
        }
        tsv.push('\n');
        att.push_str(&format!("{} {}", r.attention.rows, r.attention.cols));
        for x in &r.attention.data {
            att.push(' ');
            att.push_str(&x.to_string());
        }
        att.push('\n');
    }
    (tsv, att)
}

/// Token a baseline translator emits for a word it cannot translate.
pub const UNKNOWN_TOKEN: &str = "UNK";

/// A synthetic translation corpus built from a cognate lexicon.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMt {
    pub records: Vec<SentenceRecord>,
    /// Source-side text the shortlist is built from.
    pub monolingual: Vec<String>,
    /// Number of source words that are frequent (in the shortlist).
    pub frequent_words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMtConfig {
    pub sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Share of source tokens drawn from the rare part of the lexicon.
    pub oov_rate: f64,
    /// Share of the lexicon that is frequent.
    pub frequent_share: f64,
    /// Chance of swapping each adjacent target pair.
    pub swap_rate: f64,
    /// Attention weight on the aligned source token.
    pub peak: f64,
    pub monolingual_tokens: usize,
    pub seed: u64,
}

impl Default for SyntheticMtConfig {
    fn default() -> Self {
        SyntheticMtConfig {
            sentences: 500,
            min_len: 5,
            max_len: 12,
            oov_rate: 0.2,
            frequent_share: 0.3,
            swap_rate: 0.1,
            peak: 0.7,
            monolingual_tokens: 20_000,
            seed: 0,
        }
    }
}

/// Sentences over `lexicon` (source word, cognate). Frequent words are
/// translated correctly by the simulated baseline; rare words come out as
/// [`UNKNOWN_TOKEN`]. Attention peaks on the aligned source word. The
/// monolingual corpus only contains frequent words, so the rare ones fall
/// outside any shortlist.
pub fn synthetic_mt(lexicon: &[CognatePair], cfg: &SyntheticMtConfig) -> Result<SyntheticMt> {
    let mut unique: Vec<&CognatePair> = Vec::new();
    let mut seen = HashSet::new();
    for p in lexicon {
        if seen.insert(p.source.as_str()) {
            unique.push(p);
        }
    }
    if unique.len() < 2 || cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::InvalidArgument(
            "need at least two lexicon entries and a valid length range".into(),
        ));
    }
    let n_frequent =
        ((unique.len() as f64 * cfg.frequent_share).round() as usize).clamp(1, unique.len() - 1);
    let (frequent, rare) = unique.split_at(n_frequent);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let monolingual: Vec<String> = (0..cfg.monolingual_tokens)
        .map(|_| frequent[rng.gen_range(0..frequent.len())].source.clone())
        .collect();

    let mut records = Vec::with_capacity(cfg.sentences);
    for _ in 0..cfg.sentences {
        let len = rng.gen_range(cfg.min_len..=cfg.max_len);
        let words: Vec<(&CognatePair, bool)> = (0..len)
            .map(|_| {
                if rng.gen_bool(cfg.oov_rate) {
                    (*rare.choose(&mut rng).expect("nonempty"), true)
                } else {
                    (*frequent.choose(&mut rng).expect("nonempty"), false)
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..len).collect();
        let mut i = 0;
        while i + 1 < len {
            if rng.gen_bool(cfg.swap_rate) {
                order.swap(i, i + 1);
                i += 2;
            } else {
                i += 1;
            }
        }
        let source = words.iter().map(|(p, _)| p.source.clone()).collect();
        let reference = order.iter().map(|&s| words[s].0.target.clone()).collect();
        let baseline = order
            .iter()
            .map(|&s| {
                if words[s].1 {
                    UNKNOWN_TOKEN.to_string()
                } else {
                    words[s].0.target.clone()
                }
            })
            .collect();
        let rest = if len > 1 {
            (1.0 - cfg.peak) / (len - 1) as f64
        } else {
            0.0
        };
        let mut data = Vec::with_capacity(len * len);
        for &s in &order {
            data.extend((0..len).map(|j| {
                if j == s {
                    if len > 1 {
                        cfg.peak
                    } else {
                        1.0
                    }
                } else {
                    rest
                }
            }));
        }
        records.push(SentenceRecord {
            source,
            baseline,
            attention: AttentionMatrix::new(len, len, data)?,
            reference: Some(reference),
        });
    }
    Ok(SyntheticMt {
        records,
        monolingual,
        frequent_words: n_frequent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn shortlist_examples() {
        let s = build_shortlist(&toks("a a b"), 1).unwrap();
        assert_eq!(s.entries, vec![("a".to_string(), 2)]);
        let s = build_shortlist(&toks("b a c"), 2).unwrap();
        assert_eq!(
            s.entries.iter().map(|e| e.0.as_str()).collect::<Vec<_>>(),
            ["a", "b"]
        );
        assert_eq!(build_shortlist(&toks("x y"), 10).unwrap().len(), 2);
        assert!(matches!(
            build_shortlist::<&str>(&[], 3),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn oov_examples() {
        let s = build_shortlist(&toks("a b"), 5).unwrap();
        assert_eq!(detect_oov(&toks("a c b"), &s), vec![1]);
        assert!(detect_oov(&toks("a b"), &s).is_empty());
        assert_eq!(
            detect_oov(&toks("a b"), &FrequencyShortlist::empty()),
            vec![0, 1]
        );
    }

    #[test]
    fn alignment_examples() {
        let id = AttentionMatrix::identity(3);
        assert_eq!(
            align_from_attention(&id).unwrap(),
            vec![vec![0], vec![1], vec![2]]
        );
        let a = AttentionMatrix::new(1, 3, vec![0.1, 0.7, 0.2]).unwrap();
        assert_eq!(
            align_from_attention(&a).unwrap(),
            vec![vec![], vec![0], vec![]]
        );
        let tie = AttentionMatrix::new(1, 2, vec![0.5, 0.5]).unwrap();
        assert_eq!(align_from_attention(&tie).unwrap()[0], vec![0]);
        let bad = AttentionMatrix::new(1, 2, vec![0.5, 0.6]).unwrap();
        assert!(matches!(
            align_from_attention(&bad),
            Err(Error::InvalidAttention(_))
        ));
    }

    #[test]
    fn correction_touches_only_aligned_tokens() {
        let pair = AlignedSentencePair::new(
            toks("x yaka z"),
            toks("X UNK Z"),
            AttentionMatrix::identity(3),
        )
        .unwrap();
        let upper = |w: &str| Ok(w.replace('y', "j"));
        let c = correct_translation(&pair, &[], &upper);
        assert_eq!(c.tokens, pair.baseline);
        let c = correct_translation(&pair, &[1], &upper);
        assert_eq!(c.tokens, toks("X jaka Z"));
        assert_eq!(c.changed, vec![1]);
    }

    #[test]
    fn punctuation_is_detached_and_reattached() {
        assert_eq!(tokenize("राम, घर गया।"), toks("राम , घर गया ।"));
        assert_eq!(detokenize(&toks("राम , घर गया ।")), "राम, घर गया।");
    }

    #[test]
    fn sidecar_round_trip() {
        let r = SentenceRecord {
            source: toks("a b"),
            baseline: toks("c"),
            attention: AttentionMatrix::new(1, 2, vec![0.25, 0.75]).unwrap(),
            reference: Some(toks("d")),
        };
        let (tsv, att) = format_pipeline_input(std::slice::from_ref(&r));
        assert_eq!(parse_pipeline_input(&tsv, &att).unwrap(), vec![r]);
        assert!(matches!(
            parse_pipeline_input("a\tb\n", ""),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn identical_baseline_has_zero_delta() {
        let mut r = SentenceRecord {
            source: toks("a b c d"),
            baseline: toks("a b c d"),
            attention: AttentionMatrix::identity(4),
            reference: Some(toks("a b c d")),
        };
        let id = |w: &str| Ok(w.to_string());
        let rows = evaluate_pipeline(&[r.clone()], &toks("a b"), &[1, 2], &id).unwrap();
        assert!(rows.iter().all(|row| row.delta == 0.0));
        r.reference = None;
        assert!(matches!(
            evaluate_pipeline(&[r], &toks("a"), &[1], &id),
            Err(Error::InvalidArgument(_))
        ));
    }
}
