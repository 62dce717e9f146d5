//! Pre-trained character embeddings: averages of word vectors, and the
//! input layer of a character language model.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::cells::{
    bidirectional_encode, dropout, CellKind, CellParams, EmbeddingTable, Linear, Mode,
};
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerSpec};
use crate::params::{Bindings, ParamSet};
use crate::tensor::Tensor;
use crate::text::{CharVocab, NUM_SPECIALS};
use crate::Real;

/// Word vectors of one fixed dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WordVectorStore {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl WordVectorStore {
    pub fn new(dim: usize) -> Self {
        WordVectorStore {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    pub fn insert(&mut self, word: impl Into<String>, v: Vec<f64>) -> Result<()> {
        let word = word.into();
        if v.len() != self.dim {
            return Err(Error::InvalidShape(format!(
                "vector for `{word}` has {} values, expected {}",
                v.len(),
                self.dim
            )));
        }
        if self.vectors.contains_key(&word) {
            return Err(Error::InvalidArgument(format!("duplicate word `{word}`")));
        }
        self.vectors.insert(word, v);
        Ok(())
    }

    /// Every vector multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let vectors = self
            .vectors
            .iter()
            .map(|(w, v)| (w.clone(), v.iter().map(|x| x * factor).collect()))
            .collect();
        WordVectorStore {
            dim: self.dim,
            vectors,
        }
    }

    /// Parses `word v1 ... vD` lines, with an optional `count dim` first line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut store: Option<WordVectorStore> = None;
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let err = |m: String| Error::Parse {
                line: i + 1,
                message: m,
            };
            if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                store = Some(WordVectorStore::new(fields[1].parse().expect("checked")));
                continue;
            }
            let values = fields[1..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| err(format!("bad number `{f}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            if values.is_empty() {
                return Err(err("word without a vector".into()));
            }
            let s = store.get_or_insert_with(|| WordVectorStore::new(values.len()));
            s.insert(fields[0], values)
                .map_err(|e| err(e.to_string()))?;
        }
        Ok(store.unwrap_or_default())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// The store in the text format read by [`WordVectorStore::parse`].
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.len(), self.dim);
        for (w, v) in &self.vectors {
            s.push_str(w);
            for x in v {
                s.push(' ');
                s.push_str(&x.to_string());
            }
            s.push('\n');
        }
        s
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Word vectors built from hashed character n-grams (n = 1..=3, with word
/// boundary marks): each n-gram gets a seeded random vector in
/// `[-0.5, 0.5)^dim` and a word is the sum of its n-grams.
pub fn hashed_subword_vectors<S: AsRef<str>>(
    words: &[S],
    dim: usize,
    seed: u64,
) -> Result<WordVectorStore> {
    let mut store = WordVectorStore::new(dim);
    let mut cache: HashMap<String, Vec<f64>> = HashMap::new();
    for w in words {
        let w = w.as_ref();
        if store.get(w).is_some() || w.is_empty() {
            continue;
        }
        let marked: Vec<char> = std::iter::once('<')
            .chain(w.chars())
            .chain(std::iter::once('>'))
            .collect();
        let mut sum = vec![0.0; dim];
        for n in 1..=3 {
            for gram in marked.windows(n) {
                let key: String = gram.iter().collect();
                let v = cache.entry(key).or_insert_with_key(|k| {
                    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(k.as_bytes()) ^ seed);
                    (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect()
                });
                sum.iter_mut().zip(v.iter()).for_each(|(s, x)| *s += x);
            }
        }
        store.insert(w, sum)?;
    }
    Ok(store)
}

/// How words are weighted when averaging into character vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountWeighting {
    /// Each distinct word counts once, times the character's count in it.
    #[default]
    WordType,
    /// Additionally weighted by how often the word occurs in the corpus.
    TokenFrequency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FtAvgEmbedding {
    pub table: EmbeddingTable,
    /// Non-special characters of the vocabulary that no stored word contains.
    pub missing: Vec<char>,
}

/// Character vectors as the count-weighted mean of the vectors of the
/// corpus words containing each character. An empty corpus means every
/// stored word once.
pub fn ft_avg_embed<S: AsRef<str>>(
    store: &WordVectorStore,
    corpus: &[S],
    vocab: &CharVocab,
    weighting: CountWeighting,
) -> Result<FtAvgEmbedding> {
    if store.is_empty() {
        return Err(Error::EmptyInput("word vector store is empty".into()));
    }
    let mut freq: BTreeMap<&str, f64> = BTreeMap::new();
    if corpus.is_empty() {
        store
            .words()
            .for_each(|w| *freq.entry(w).or_default() += 1.0);
    } else {
        corpus
            .iter()
            .for_each(|w| *freq.entry(w.as_ref()).or_default() += 1.0);
    }
    let dim = store.dim();
    let mut sums = vec![0.0; vocab.len() * dim];
    let mut weights = vec![0.0; vocab.len()];
    for (word, n) in freq {
        let Some(v) = store.get(word) else { continue };
        let factor = match weighting {
            CountWeighting::WordType => 1.0,
            CountWeighting::TokenFrequency => n,
        };
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for c in word.chars() {
            if let Some(id) = vocab.symbols().iter().position(|&s| s == c) {
                *counts.entry(id + NUM_SPECIALS).or_default() += 1.0;
            }
        }
        for (id, count) in counts {
            let w = count * factor;
            weights[id] += w;
            sums[id * dim..(id + 1) * dim]
                .iter_mut()
                .zip(v)
                .for_each(|(s, x)| *s += w * x);
        }
    }
    let mut missing = Vec::new();
    for id in 0..vocab.len() {
        if weights[id] > 0.0 {
            sums[id * dim..(id + 1) * dim]
                .iter_mut()
                .for_each(|s| *s /= weights[id]);
        } else if let Some(c) = vocab.symbol(id).filter(|_| id >= NUM_SPECIALS) {
            missing.push(c);
        }
    }
    if !missing.is_empty() {
        warn!(
            "{} characters occur in no stored word and get zero vectors",
            missing.len()
        );
    }
    Ok(FtAvgEmbedding {
        table: EmbeddingTable::new(vocab.len(), dim, sums)?,
        missing,
    })
}

/// Rows of `table` (indexed by `from`) rearranged for `to`; characters
/// unknown to `from` get zero rows. Special rows are copied.
pub fn remap_embedding(
    table: &EmbeddingTable,
    from: &CharVocab,
    to: &CharVocab,
) -> Result<EmbeddingTable> {
    if table.vocab_size() != from.len() {
        return Err(Error::InvalidShape(
            "embedding rows do not match the source vocabulary".into(),
        ));
    }
    let dim = table.dim();
    let mut data = vec![0.0; to.len() * dim];
    for id in 0..to.len() {
        let src = if id < NUM_SPECIALS {
            Some(id)
        } else {
            to.symbol(id)
                .and_then(|c| from.symbols().iter().position(|&s| s == c))
                .map(|p| p + NUM_SPECIALS)
        };
        if let Some(src) = src {
            data[id * dim..(id + 1) * dim].copy_from_slice(table.row(src));
        }
    }
    let mut out = EmbeddingTable::new(to.len(), dim, data)?;
    out.trainable = table.trainable;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LmDirection {
    #[default]
    Forward,
    /// Reads the context both ways; the predicted character is never part
    /// of the input.
    Bidirectional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharLMConfig {
    /// Context length plus the predicted character.
    pub window: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub direction: LmDirection,
    pub embed_dim: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for CharLMConfig {
    fn default() -> Self {
        CharLMConfig {
            window: 30,
            hidden: 75,
            dropout: 0.5,
            direction: LmDirection::Forward,
            embed_dim: 300,
            batch_size: 64,
            max_epochs: 50,
            patience: 7,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl CharLMConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::InvalidArgument(format!(
                "window {} must be at least 2",
                self.window
            )));
        }
        if self.hidden == 0 || self.embed_dim == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument(
                "language model sizes must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Anything that gives next-character distributions over a vocabulary.
pub trait CharPredictor {
    fn vocab(&self) -> &CharVocab;
    /// Longest context the predictor looks at.
    fn context_len(&self) -> usize;
    /// One distribution over `vocab().len()` ids per context.
    fn distributions(&self, contexts: &[Vec<usize>]) -> Result<Vec<Vec<f64>>>;
}

fn contexts_for(ids: &[usize], positions: &[usize], len: usize) -> Vec<Vec<usize>> {
    positions
        .iter()
        .map(|&p| ids[p.saturating_sub(len)..p].to_vec())
        .collect()
}

fn perplexity_at(lm: &dyn CharPredictor, ids: &[usize], positions: &[usize]) -> Result<f64> {
    if positions.is_empty() {
        return Err(Error::EmptyInput("nothing to predict".into()));
    }
    let mut nll = 0.0;
    for chunk in positions.chunks(256) {
        let dists = lm.distributions(&contexts_for(ids, chunk, lm.context_len()))?;
        for (&p, d) in chunk.iter().zip(&dists) {
            nll -= d[ids[p]].max(f64::MIN_POSITIVE).ln();
        }
    }
    Ok((nll / positions.len() as f64).exp())
}

/// `exp` of the mean negative log-likelihood of every character of
/// `held_out` after the first, each predicted from the characters before it.
pub fn perplexity(lm: &dyn CharPredictor, held_out: &str) -> Result<f64> {
    let ids: Vec<usize> = held_out.chars().map(|c| lm.vocab().id(c)).collect();
    if ids.len() < 2 {
        return Err(Error::EmptyInput(
            "held-out text needs at least two characters".into(),
        ));
    }
    let positions: Vec<usize> = (1..ids.len()).collect();
    perplexity_at(lm, &ids, &positions)
}

/// A recurrent next-character model.
#[derive(Debug, Clone, PartialEq)]
pub struct CharLm {
    pub config: CharLMConfig,
    pub vocab: CharVocab,
    pub params: ParamSet<Real>,
}

const LM_EMBEDDING: &str = "emb";

impl CharLm {
    pub fn new(config: CharLMConfig, vocab: CharVocab) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        params.insert(
            LM_EMBEDDING,
            Tensor::uniform(vec![vocab.len(), config.embed_dim], 0.1, &mut rng),
        );
        CellParams::new(CellKind::Lstm, config.embed_dim, config.hidden, "lm.fwd")
            .init(&mut params, &mut rng);
        let mut width = config.hidden;
        if config.direction == LmDirection::Bidirectional {
            CellParams::new(CellKind::Lstm, config.embed_dim, config.hidden, "lm.bwd")
                .init(&mut params, &mut rng);
            width *= 2;
        }
        Linear::new(width, vocab.len(), "lm.out").init(&mut params, 0.08, &mut rng);
        Ok(CharLm {
            config,
            vocab,
            params,
        })
    }

    /// The learned input embedding.
    pub fn embedding(&self) -> Result<EmbeddingTable> {
        let t = self.params.get(LM_EMBEDDING)?;
        EmbeddingTable::new(t.rows(), t.cols(), t.data().to_vec())
    }

    /// Logits `[B, V]` for equal-length contexts.
    fn logits(
        &self,
        g: &mut Graph<Real>,
        b: &Bindings,
        contexts: &[Vec<usize>],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<crate::autodiff::Var> {
        let len = contexts[0].len();
        let emb = b.get(LM_EMBEDDING)?;
        let mode = if rng.is_some() {
            Mode::Train
        } else {
            Mode::Eval
        };
        let mut drop = |g: &mut Graph<Real>, x| match rng.as_deref_mut() {
            Some(r) if self.config.dropout > 0.0 => dropout(g, x, self.config.dropout, mode, r),
            _ => Ok(x),
        };
        let mut seq = Vec::with_capacity(len);
        for t in 0..len {
            let col: Vec<usize> = contexts.iter().map(|c| c[t]).collect();
            let x = g.gather_rows(emb, &col)?;
            seq.push(drop(g, x)?);
        }
        let fwd = CellParams::new(
            CellKind::Lstm,
            self.config.embed_dim,
            self.config.hidden,
            "lm.fwd",
        )
        .bind(b)?;
        let summary = if self.config.direction == LmDirection::Bidirectional {
            let bwd = CellParams::new(
                CellKind::Lstm,
                self.config.embed_dim,
                self.config.hidden,
                "lm.bwd",
            )
            .bind(b)?;
            let bi = bidirectional_encode(g, &seq, None, &fwd, &bwd)?;
            g.concat_cols(&[bi.fwd_final, bi.bwd_final])?
        } else {
            let mut s = fwd.zero_state(g, contexts.len());
            for &x in &seq {
                s = fwd.step(g, x, s)?;
            }
            s.h
        };
        let summary = drop(g, summary)?;
        let width = if self.config.direction == LmDirection::Bidirectional {
            2
        } else {
            1
        } * self.config.hidden;
        Linear::new(width, self.vocab.len(), "lm.out").apply(g, b, summary)
    }

    fn batch_loss(
        &self,
        g: &mut Graph<Real>,
        b: &Bindings,
        ids: &[usize],
        targets: &[usize],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<crate::autodiff::Var> {
        let contexts = contexts_for(ids, targets, self.config.window - 1);
        let logits = self.logits(g, b, &contexts, rng)?;
        let labels: Vec<usize> = targets.iter().map(|&p| ids[p]).collect();
        let w = vec![1.0 / targets.len() as Real; targets.len()];
        g.softmax_cross_entropy(logits, &labels, &w)
    }

    fn mean_loss(&self, ids: &[usize], positions: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for chunk in positions.chunks(256) {
            let mut g = Graph::new();
            let b = self.params.bind(&mut g, false);
            let l = self.batch_loss(&mut g, &b, ids, chunk, None)?;
            total += g.value(l).data()[0] * chunk.len() as f64;
        }
        Ok(total / positions.len() as f64)
    }
}

impl CharPredictor for CharLm {
    fn vocab(&self) -> &CharVocab {
        &self.vocab
    }

    fn context_len(&self) -> usize {
        self.config.window - 1
    }

    fn distributions(&self, contexts: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, c) in contexts.iter().enumerate() {
            by_len.entry(c.len()).or_default().push(i);
        }
        let mut out = vec![Vec::new(); contexts.len()];
        for (len, idx) in by_len {
            if len == 0 {
                let unigram = vec![1.0 / self.vocab.len() as f64; self.vocab.len()];
                idx.iter().for_each(|&i| out[i] = unigram.clone());
                continue;
            }
            let group: Vec<Vec<usize>> = idx.iter().map(|&i| contexts[i].clone()).collect();
            let mut g = Graph::new();
            let b = self.params.bind(&mut g, false);
            let logits = self.logits(&mut g, &b, &group, None)?;
            let probs = g.softmax(logits)?;
            for (row, &i) in g.value(probs).data().chunks(self.vocab.len()).zip(&idx) {
                out[i] = row.to_vec();
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct CharLmOutcome {
    pub lm: CharLm,
    pub embedding: EmbeddingTable,
    /// On the last tenth of the corpus.
    pub perplexity: f64,
    pub epochs: usize,
}

/// Trains a next-character model on the first 80% of `corpus`, stops early
/// on the next 10% and reports perplexity on the last 10%.
pub fn train_char_lm(corpus: &str, cfg: &CharLMConfig) -> Result<CharLmOutcome> {
    cfg.validate()?;
    let chars: Vec<char> = corpus.chars().collect();
    if chars.len() <= cfg.window {
        return Err(Error::InvalidArgument(format!(
            "corpus of {} characters is not longer than the window {}",
            chars.len(),
            cfg.window
        )));
    }
    let vocab = CharVocab::from_symbols(chars.iter().copied());
    let ids: Vec<usize> = chars.iter().map(|&c| vocab.id(c)).collect();
    let n = ids.len();
    let (val_start, test_start) = (n * 8 / 10, n * 9 / 10);
    let mut train_pos: Vec<usize> = (1..val_start.max(2)).collect();
    let val_pos: Vec<usize> = (val_start.max(2)..test_start.max(3).min(n)).collect();
    let test_pos: Vec<usize> = (test_start.max(3).min(n - 1)..n).collect();

    let mut lm = CharLm::new(cfg.clone(), vocab)?;
    let mut opt = Optimizer::<Real>::new(OptimizerSpec::adam(cfg.lr))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut best: Option<(f64, ParamSet<Real>)> = None;
    let mut since_best = 0;
    let mut epochs = 0;
    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        train_pos.shuffle(&mut rng);
        for chunk in train_pos.chunks(cfg.batch_size) {
            let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &p in chunk {
                by_len.entry(p.min(cfg.window - 1)).or_default().push(p);
            }
            let mut g = Graph::new();
            let b = lm.params.bind(&mut g, true);
            let mut parts = Vec::new();
            for group in by_len.values() {
                let l = lm.batch_loss(&mut g, &b, &ids, group, Some(&mut rng))?;
                parts.push(g.scale(l, group.len() as Real / chunk.len() as Real)?);
            }
            let mut loss = parts[0];
            for &part in &parts[1..] {
                loss = g.add(loss, part)?;
            }
            if !g.value(loss).data()[0].is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: "language model loss is not finite".into(),
                });
            }
            g.backward(loss)?;
            lm.params.zero_grads();
            lm.params.absorb_grads(&g, &b)?;
            opt.step(&mut lm.params, 0.0)?;
        }
        opt.end_epoch();
        let val = if val_pos.is_empty() {
            0.0
        } else {
            lm.mean_loss(&ids, &val_pos)?
        };
        info!("language model epoch {epoch}: validation loss {val:.4}");
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, lm.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
    }
    lm.params = best.expect("at least one epoch").1;
    let perplexity = perplexity_at(&lm, &ids, &test_pos)?;
    Ok(CharLmOutcome {
        embedding: lm.embedding()?,
        lm,
        perplexity,
        epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(entries: &[(&str, &[f64])]) -> WordVectorStore {
        let mut s = WordVectorStore::new(entries[0].1.len());
        for (w, v) in entries {
            s.insert(*w, v.to_vec()).unwrap();
        }
        s
    }

    fn row_of(e: &FtAvgEmbedding, vocab: &CharVocab, c: char) -> Vec<f64> {
        e.table.row(vocab.id(c)).to_vec()
    }

    #[test]
    fn weighted_means() {
        let vocab = CharVocab::from_symbols("cxyz".chars());
        let s = store(&[("xc", &[2.0]), ("yc", &[4.0])]);
        let e = ft_avg_embed(&s, &["xc", "yc"], &vocab, CountWeighting::WordType).unwrap();
        assert_eq!(row_of(&e, &vocab, 'c'), vec![3.0]);
        assert_eq!(row_of(&e, &vocab, 'x'), vec![2.0]);
        assert_eq!(e.missing, vec!['z']);

        let s = store(&[("cc", &[0.0]), ("c", &[3.0])]);
        let e = ft_avg_embed(&s, &["cc", "c"], &vocab, CountWeighting::WordType).unwrap();
        assert_eq!(row_of(&e, &vocab, 'c'), vec![1.0]);
    }

    #[test]
    fn token_frequency_weighting() {
        let vocab = CharVocab::from_symbols("ab".chars());
        let s = store(&[("a", &[0.0]), ("ab", &[4.0])]);
        let e = ft_avg_embed(
            &s,
            &["a", "a", "a", "ab"],
            &vocab,
            CountWeighting::TokenFrequency,
        )
        .unwrap();
        assert_eq!(row_of(&e, &vocab, 'a'), vec![1.0]);
        assert!(ft_avg_embed(
            &WordVectorStore::new(2),
            &["a"],
            &vocab,
            CountWeighting::WordType
        )
        .is_err());
    }

    #[test]
    fn vector_file_format() {
        let s = WordVectorStore::parse("2 3\nab 1 2 3\ncd 4 5 6\n").unwrap();
        assert_eq!((s.len(), s.dim()), (2, 3));
        assert_eq!(WordVectorStore::parse(&s.to_text()).unwrap(), s);
        assert_eq!(WordVectorStore::parse("ab 1 2\n").unwrap().dim(), 2);
        assert!(matches!(
            WordVectorStore::parse("ab 1 2\ncd 1\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            WordVectorStore::parse("ab 1\nab 2\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn remapping_follows_symbols() {
        let from = CharVocab::from_symbols("ab".chars());
        let to = CharVocab::from_symbols("bc".chars());
        let t = EmbeddingTable::new(from.len(), 1, (0..from.len()).map(|i| i as f64).collect())
            .unwrap();
        let r = remap_embedding(&t, &from, &to).unwrap();
        assert_eq!(r.row(to.id('b')), t.row(from.id('b')));
        assert_eq!(r.row(to.id('c')), &[0.0]);
        assert_eq!(r.row(0), t.row(0));
    }

    #[test]
    fn subword_vectors_are_seeded() {
        let a = hashed_subword_vectors(&["kala", "kal"], 4, 1).unwrap();
        assert_eq!(a, hashed_subword_vectors(&["kala", "kal"], 4, 1).unwrap());
        assert_ne!(a.get("kala"), a.get("kal"));
    }

    #[test]
    fn short_corpus_is_rejected() {
        let cfg = CharLMConfig {
            window: 5,
            ..Default::default()
        };
        assert!(matches!(
            train_char_lm("abcde", &cfg),
            Err(Error::InvalidArgument(_))
        ));
        assert!(CharLMConfig {
            window: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
