//! Edit distance, string similarity, word accuracy and BLEU.
//!
//! String-level functions count Unicode code points after NFC normalisation.

use std::collections::HashMap;
use std::hash::Hash;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{classify_errors, graphemes, ErrorTag};

/// One step of a minimal edit script from `a` to `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Keep {
        a: usize,
        b: usize,
    },
    Substitute {
        a: usize,
        b: usize,
    },
    /// `b[b]` inserted before `a[before]`.
    Insert {
        before: usize,
        b: usize,
    },
    Delete {
        a: usize,
    },
}

impl EditOp {
    pub fn is_edit(&self) -> bool {
        !matches!(self, EditOp::Keep { .. })
    }
}

fn dp_table<T: PartialEq>(a: &[T], b: &[T]) -> Vec<Vec<usize>> {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d
}

/// Unit-cost edit distance between two symbol sequences.
pub fn levenshtein_units<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// A minimal edit script. Among equal-cost paths, substitutions are
/// preferred over deletions, and deletions over insertions.
pub fn edit_script<T: PartialEq>(a: &[T], b: &[T]) -> Vec<EditOp> {
    let d = dp_table(a, b);
    let (mut i, mut j) = (a.len(), b.len());
    let mut ops = Vec::with_capacity(i.max(j));
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]) {
            ops.push(if a[i - 1] == b[j - 1] {
                EditOp::Keep { a: i - 1, b: j - 1 }
            } else {
                EditOp::Substitute { a: i - 1, b: j - 1 }
            });
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(EditOp::Delete { a: i - 1 });
            i -= 1;
        } else {
            ops.push(EditOp::Insert {
                before: i,
                b: j - 1,
            });
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

pub fn levenshtein(s1: &str, s2: &str) -> usize {
    levenshtein_units(&graphemes(s1), &graphemes(s2))
}

/// `(1 - d / (len1 + len2)) * 100`, with two empty strings scoring 100.
pub fn string_similarity(s1: &str, s2: &str) -> f64 {
    let (a, b) = (graphemes(s1), graphemes(s2));
    let total = a.len() + b.len();
    if total == 0 {
        return 100.0;
    }
    (1.0 - levenshtein_units(&a, &b) as f64 / total as f64) * 100.0
}

/// Exact match after normalisation.
pub fn word_accuracy(pred: &str, gold: &str) -> bool {
    graphemes(pred) == graphemes(gold)
}

/// Percentage of exact matches over `(pred, gold)` pairs; 0 for no pairs.
pub fn corpus_word_accuracy<S: AsRef<str>>(pairs: &[(S, S)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let hits = pairs
        .iter()
        .filter(|(p, g)| word_accuracy(p.as_ref(), g.as_ref()))
        .count();
    100.0 * hits as f64 / pairs.len() as f64
}

fn ngram_counts<T: Hash + Eq + Clone>(xs: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if n == 0 || xs.len() < n {
        return m;
    }
    for w in xs.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// `(clipped matches, candidate n-gram total)` for one order.
fn clipped<T: Hash + Eq + Clone>(pred: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let p = ngram_counts(pred, n);
    let r = ngram_counts(reference, n);
    let matches = p
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, pred.len().saturating_sub(n - 1))
}

fn brevity_penalty(pred_len: usize, ref_len: usize) -> f64 {
    if pred_len == 0 {
        0.0
    } else if pred_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / pred_len as f64).exp()
    }
}

/// Sentence-level BLEU over arbitrary symbols, unsmoothed. Orders longer
/// than both sequences are left out of the geometric mean.
pub fn bleu_units<T: Hash + Eq + Clone>(pred: &[T], reference: &[T], max_n: usize) -> Result<f64> {
    if max_n < 1 {
        return Err(Error::InvalidArgument("max_n must be at least 1".into()));
    }
    if reference.is_empty() {
        return Err(Error::InvalidArgument("empty reference".into()));
    }
    let orders = max_n.min(pred.len().max(reference.len()));
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let (m, total) = clipped(pred, reference, n);
        if m == 0 || total == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / total as f64).ln();
    }
    Ok(100.0 * brevity_penalty(pred.len(), reference.len()) * (log_sum / orders as f64).exp())
}

/// Character n-gram BLEU in `[0, 100]`.
pub fn char_bleu(pred: &str, reference: &str, max_n: usize) -> Result<f64> {
    bleu_units(&graphemes(pred), &graphemes(reference), max_n)
}

/// Corpus-level token BLEU (n = 1..4): clipped counts and lengths are summed
/// over all sentences before precisions and the brevity penalty are taken.
pub fn corpus_bleu<S: AsRef<str>>(preds: &[Vec<S>], refs: &[Vec<S>]) -> Result<f64> {
    if preds.len() != refs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} references",
            preds.len(),
            refs.len()
        )));
    }
    const MAX_N: usize = 4;
    let mut matches = [0usize; MAX_N];
    let mut totals = [0usize; MAX_N];
    let (mut pred_len, mut ref_len) = (0, 0);
    for (p, r) in preds.iter().zip(refs) {
        let p: Vec<&str> = p.iter().map(AsRef::as_ref).collect();
        let r: Vec<&str> = r.iter().map(AsRef::as_ref).collect();
        pred_len += p.len();
        ref_len += r.len();
        for n in 1..=MAX_N {
            let (m, t) = clipped(&p, &r, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
    }
    if matches.iter().zip(&totals).any(|(&m, &t)| m == 0 || t == 0) {
        return Ok(0.0);
    }
    let log_mean = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / MAX_N as f64;
    Ok(100.0 * brevity_penalty(pred_len, ref_len) * log_mean.exp())
}

/// Scores for one evaluated word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub source: String,
    pub gold: String,
    pub prediction: String,
    pub ss: f64,
    pub wa: f64,
    pub bleu: f64,
    pub tags: Vec<ErrorTag>,
}

/// Aggregate scores (means of the per-item values) plus the items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub ss: f64,
    pub wa: f64,
    pub n_items: usize,
    pub items: Vec<EvalRecord>,
}

impl EvalReport {
    /// Scores `(source, gold, prediction)` triples. Error tags are attached
    /// when `tag_errors` is set; items whose scripts cannot be classified get
    /// no tags.
    pub fn from_triples<S: AsRef<str>>(triples: &[(S, S, S)], tag_errors: bool) -> Result<Self> {
        if triples.is_empty() {
            return Err(Error::EmptyInput("nothing to evaluate".into()));
        }
        let items = triples
            .iter()
            .map(|(s, g, p)| {
                let (s, g, p) = (s.as_ref(), g.as_ref(), p.as_ref());
                let tags = if tag_errors {
                    classify_errors(s, g, p).unwrap_or_default()
                } else {
                    Vec::new()
                };
                Ok(EvalRecord {
                    source: s.to_string(),
                    gold: g.to_string(),
                    prediction: p.to_string(),
                    ss: string_similarity(p, g),
                    wa: if word_accuracy(p, g) { 100.0 } else { 0.0 },
                    bleu: char_bleu(p, g, 4)?,
                    tags,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_items(items))
    }

    pub fn from_items(items: Vec<EvalRecord>) -> Self {
        let n = items.len().max(1) as f64;
        let mean = |f: fn(&EvalRecord) -> f64| items.iter().map(f).sum::<f64>() / n;
        EvalReport {
            bleu: mean(|r| r.bleu),
            ss: mean(|r| r.ss),
            wa: mean(|r| r.wa),
            n_items: items.len(),
            items,
        }
    }

    /// One tab-separated line per item, then a `#`-prefixed aggregate footer.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "source\tgold\tprediction\tss\twa\tbleu\ttags")?;
        for r in &self.items {
            let tags: Vec<&str> = r.tags.iter().map(ErrorTag::name).collect();
            writeln!(
                w,
                "{}\t{}\t{}\t{:.4}\t{:.0}\t{:.4}\t{}",
                r.source,
                r.gold,
                r.prediction,
                r.ss,
                r.wa,
                r.bleu,
                tags.join(",")
            )?;
        }
        writeln!(
            w,
            "# n={}\tss={:.4}\twa={:.4}\tbleu={:.4}",
            self.n_items, self.ss, self.wa, self.bleu
        )?;
        Ok(())
    }
}

/// Text table with one column per model and rows BLEU / SS / WA.
pub fn summary_table(models: &[(&str, &EvalReport)]) -> String {
    let mut out = String::from("Metric");
    for (name, _) in models {
        out.push('\t');
        out.push_str(name);
    }
    out.push('\n');
    let rows: [(&str, fn(&EvalReport) -> String); 3] = [
        ("BLEU", |r| format!("{:.2}", r.bleu)),
        ("SS", |r| format!("{:.2}", r.ss)),
        ("WA", |r| format!("{:.2}%", r.wa)),
    ];
    for (label, f) in rows {
        out.push_str(label);
        for (_, r) in models {
            out.push('\t');
            out.push_str(&f(r));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(string_similarity("abc", "abc"), 100.0);
        assert_eq!(string_similarity("abc", ""), 0.0);
        assert_eq!(string_similarity("", ""), 100.0);
        assert_eq!(string_similarity("abcd", "abed"), 87.5);
    }

    #[test]
    fn word_accuracy_examples() {
        assert!(word_accuracy("भेंट", "भेंट"));
        assert!(!word_accuracy("भेट", "भेंट"));
        let pairs = [("a", "a"), ("b", "c"), ("d", "e"), ("f", "f")];
        assert_eq!(corpus_word_accuracy(&pairs), 50.0);
    }

    #[test]
    fn char_bleu_examples() {
        assert_eq!(char_bleu("abcde", "abcde", 4).unwrap(), 100.0);
        assert_eq!(char_bleu("xyz", "abc", 4).unwrap(), 0.0);
        let v = char_bleu("aab", "ab", 2).unwrap();
        assert!((v - 100.0 * (1.0f64 / 3.0).sqrt()).abs() < 1e-9);
        assert_eq!(char_bleu("a", "a", 4).unwrap(), 100.0);
        assert!(matches!(
            char_bleu("a", "", 4),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            char_bleu("a", "a", 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn corpus_bleu_examples() {
        let refs = vec![vec!["the", "cat", "sat", "on", "mat"]];
        assert_eq!(corpus_bleu(&refs, &refs).unwrap(), 100.0);
        let other = vec![vec!["a", "b", "c", "d", "e"]];
        assert_eq!(corpus_bleu(&other, &refs).unwrap(), 0.0);
        assert!(corpus_bleu(&refs, &[]).is_err());
    }

    #[test]
    fn edit_script_reconstructs_target() {
        let a: Vec<char> = "kitten".chars().collect();
        let b: Vec<char> = "sitting".chars().collect();
        let ops = edit_script(&a, &b);
        assert_eq!(ops.iter().filter(|o| o.is_edit()).count(), 3);
        let mut out = Vec::new();
        for op in ops {
            match op {
                EditOp::Keep { b: j, .. }
                | EditOp::Substitute { b: j, .. }
                | EditOp::Insert { b: j, .. } => out.push(b[j]),
                EditOp::Delete { .. } => {}
            }
        }
        assert_eq!(out, b);
    }

    #[test]
    fn report_aggregates_are_means() {
        let t = [("x", "ab", "ab"), ("y", "ab", "ac")];
        let r = EvalReport::from_triples(&t, false).unwrap();
        assert_eq!(r.wa, 50.0);
        assert_eq!(r.ss, (100.0 + 75.0) / 2.0);
        let mut buf = Vec::new();
        r.write_tsv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
        assert!(summary_table(&[("AM", &r)]).starts_with("Metric\tAM\nBLEU"));
    }
}
