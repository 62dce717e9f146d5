//! The four encoder-decoder transducers and greedy decoding.
//!
//! Every model reads a word as `BOS c1 .. cn EOS` and is trained to emit
//! `y1 .. ym EOS` after a `BOS` start symbol.

pub mod rnn;
pub mod transformer;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::cells::{CellKind, Mode};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamSet};
use crate::text::{CharVocab, BOS, EOS, PAD};
use crate::Real;

pub use rnn::{attend_bahdanau, chunk_sizes, AttentionParams, EncoderStates};
pub use transformer::{encoder_output, multi_head_attention, positional_encoding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Seq2Seq,
    Am,
    Han,
    Tn,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Seq2Seq,
        Architecture::Am,
        Architecture::Han,
        Architecture::Tn,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Seq2Seq => "seq2seq",
            Architecture::Am => "am",
            Architecture::Han => "han",
            Architecture::Tn => "tn",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Architecture::Seq2Seq => "seq2seq",
            Architecture::Am => "AM",
            Architecture::Han => "HAN",
            Architecture::Tn => "TN",
        }
    }

    pub fn uses_cells(&self) -> bool {
        *self != Architecture::Tn
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown architecture `{s}`")))
    }
}

/// Architecture choice and sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub cell: CellKind,
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    pub chunk_size: usize,
    /// Output characters emitted before decoding is cut off.
    pub max_decode_len: usize,
    /// Only greedy decoding (width 1) is implemented.
    pub beam_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::Am,
            cell: CellKind::Lstm,
            hidden_dim: 80,
            encoder_layers: 1,
            decoder_layers: 1,
            embed_dim: 300,
            dropout: 0.2,
            num_layers: 2,
            num_heads: 4,
            d_model: 64,
            ffn_dim: 128,
            chunk_size: 3,
            max_decode_len: 30,
            beam_width: 1,
        }
    }
}

impl ModelConfig {
    /// Defaults for `architecture` (two decoder layers for HAN).
    pub fn for_architecture(architecture: Architecture) -> Self {
        let decoder_layers = if architecture == Architecture::Han {
            2
        } else {
            1
        };
        ModelConfig {
            architecture,
            decoder_layers,
            ..Default::default()
        }
    }

    /// Six-layer transformer.
    pub fn tn_full() -> Self {
        ModelConfig {
            architecture: Architecture::Tn,
            num_layers: 6,
            ..Default::default()
        }
    }

    /// Width of the character embedding.
    pub fn embed_width(&self) -> usize {
        if self.architecture == Architecture::Tn {
            self.d_model
        } else {
            self.embed_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.max_decode_len == 0 {
            return bad("max_decode_len must be positive".into());
        }
        if self.beam_width != 1 {
            return bad(format!(
                "beam width {} requested; only greedy decoding is available",
                self.beam_width
            ));
        }
        if self.architecture == Architecture::Tn {
            if self.d_model == 0 || self.num_heads == 0 || self.num_layers == 0 || self.ffn_dim == 0
            {
                return bad("transformer sizes must be positive".into());
            }
            if !self.d_model.is_multiple_of(self.num_heads) {
                return bad(format!(
                    "d_model {} not divisible by {} heads",
                    self.d_model, self.num_heads
                ));
            }
            if !self.d_model.is_multiple_of(2) {
                return bad("d_model must be even".into());
            }
        } else {
            if self.hidden_dim == 0
                || self.embed_dim == 0
                || self.encoder_layers == 0
                || self.decoder_layers == 0
            {
                return bad("recurrent sizes must be positive".into());
            }
            if self.architecture == Architecture::Han && self.chunk_size < 1 {
                return bad("chunk_size must be at least 1".into());
            }
        }
        Ok(())
    }
}

/// Decoder-step by encoder-step attention weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Real>,
}

impl AttentionMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Real>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidShape(format!(
                "{rows}x{cols} attention with {} entries",
                data.len()
            )));
        }
        Ok(AttentionMatrix { rows, cols, data })
    }

    pub fn uniform(rows: usize, cols: usize) -> Self {
        let w = if cols == 0 { 0.0 } else { 1.0 / cols as Real };
        AttentionMatrix {
            rows,
            cols,
            data: vec![w; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        (0..n).for_each(|i| data[i * n + i] = 1.0);
        AttentionMatrix {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn row(&self, i: usize) -> &[Real] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> Real {
        self.data[i * self.cols + j]
    }

    /// Largest deviation of a row sum from 1.
    pub fn max_row_error(&self) -> Real {
        (0..self.rows)
            .map(|i| (self.row(i).iter().sum::<Real>() - 1.0).abs())
            .fold(0.0, Real::max)
    }

    pub fn is_row_stochastic(&self, tol: Real) -> bool {
        self.data.iter().all(|&x| x >= 0.0 && x.is_finite()) && self.max_row_error() <= tol
    }
}

/// One decoded word.
#[derive(Debug, Clone, PartialEq)]
pub struct Transduction {
    /// Emitted symbol ids, without BOS/EOS.
    pub ids: Vec<usize>,
    pub output: String,
    /// One row per decoder step (including the step that emitted EOS), one
    /// column per source position including BOS and EOS.
    pub attention: AttentionMatrix,
    /// Decoding stopped at `max_decode_len` without emitting EOS.
    pub truncated: bool,
}

/// Per-position quantities from a teacher-forced pass over one pair.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Next-symbol distribution for each target position.
    pub distributions: Vec<Vec<Real>>,
    /// Context vector fed to the decoder at each step (empty for TN).
    pub contexts: Vec<Vec<Real>>,
    pub attention: AttentionMatrix,
}

/// A padded batch of id sequences with BOS/EOS already added.
#[derive(Debug, Clone)]
pub struct Batch {
    pub src: Vec<Vec<usize>>,
    pub tgt_in: Vec<Vec<usize>>,
    pub tgt_out: Vec<Vec<usize>>,
}

impl Batch {
    /// Pairs of raw id sequences (no specials).
    pub fn new(pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        let mut b = Batch {
            src: Vec::new(),
            tgt_in: Vec::new(),
            tgt_out: Vec::new(),
        };
        for (s, t) in pairs {
            if s.is_empty() {
                return Err(Error::EmptyInput("empty source word".into()));
            }
            b.src.push(wrap(s));
            b.tgt_in
                .push(std::iter::once(BOS).chain(t.iter().copied()).collect());
            b.tgt_out
                .push(t.iter().copied().chain(std::iter::once(EOS)).collect());
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn max_src(&self) -> usize {
        self.src.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn max_tgt(&self) -> usize {
        self.tgt_out.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Target ids and loss weights for `[step, batch]`-ordered logit rows:
    /// each word's characters share weight `1 / (len * batch)`.
    fn targets_step_major(&self) -> (Vec<usize>, Vec<Real>) {
        let (b, l) = (self.len(), self.max_tgt());
        let mut targets = Vec::with_capacity(b * l);
        let mut weights = Vec::with_capacity(b * l);
        for i in 0..l {
            for seq in &self.tgt_out {
                match seq.get(i) {
                    Some(&t) => {
                        targets.push(t);
                        weights.push(1.0 / (seq.len() * b) as Real);
                    }
                    None => {
                        targets.push(PAD);
                        weights.push(0.0);
                    }
                }
            }
        }
        (targets, weights)
    }

    /// Same as [`Batch::targets_step_major`] for `[batch, step]` ordering.
    fn targets_batch_major(&self) -> (Vec<usize>, Vec<Real>) {
        let (b, l) = (self.len(), self.max_tgt());
        let mut targets = Vec::with_capacity(b * l);
        let mut weights = Vec::with_capacity(b * l);
        for seq in &self.tgt_out {
            for i in 0..l {
                match seq.get(i) {
                    Some(&t) => {
                        targets.push(t);
                        weights.push(1.0 / (seq.len() * b) as Real);
                    }
                    None => {
                        targets.push(PAD);
                        weights.push(0.0);
                    }
                }
            }
        }
        (targets, weights)
    }
}

pub(crate) fn wrap(ids: &[usize]) -> Vec<usize> {
    std::iter::once(BOS)
        .chain(ids.iter().copied())
        .chain(std::iter::once(EOS))
        .collect()
}

/// Ids at step `t` of each sequence (PAD past the end) and the 0/1 mask.
pub(crate) fn column(seqs: &[Vec<usize>], t: usize) -> (Vec<usize>, Vec<Real>) {
    seqs.iter()
        .map(|s| match s.get(t) {
            Some(&id) => (id, 1.0),
            None => (PAD, 0.0),
        })
        .unzip()
}

/// Forward-pass switches: dropout mode and its random source.
pub struct Pass<'a> {
    pub mode: Mode,
    pub rng: Option<&'a mut ChaCha8Rng>,
    pub dropout: f64,
}

impl<'a> Pass<'a> {
    pub fn eval() -> Self {
        Pass {
            mode: Mode::Eval,
            rng: None,
            dropout: 0.0,
        }
    }

    pub fn train(dropout: f64, rng: &'a mut ChaCha8Rng) -> Self {
        Pass {
            mode: Mode::Train,
            rng: Some(rng),
            dropout,
        }
    }

    pub(crate) fn drop(&mut self, g: &mut Graph<Real>, x: Var) -> Result<Var> {
        match (&mut self.rng, self.mode) {
            (Some(rng), Mode::Train) if self.dropout > 0.0 => {
                crate::cells::dropout(g, x, self.dropout, Mode::Train, *rng)
            }
            _ => Ok(x),
        }
    }
}

/// A transducer: configuration, vocabulary and trained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: CharVocab,
    pub params: ParamSet<Real>,
}

impl Model {
    /// Freshly initialised parameters.
    pub fn new<R: Rng + ?Sized>(
        config: ModelConfig,
        vocab: CharVocab,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        match config.architecture {
            Architecture::Tn => transformer::init(&config, vocab.len(), &mut params, rng),
            _ => rnn::init(&config, vocab.len(), &mut params, rng),
        }
        Ok(Model {
            config,
            vocab,
            params,
        })
    }

    /// Name of the character embedding parameter.
    pub const EMBEDDING: &'static str = "emb";

    /// Mean per-word cross-entropy of a batch, built on `g` with the given
    /// parameter bindings.
    pub fn loss(
        &self,
        g: &mut Graph<Real>,
        b: &Bindings,
        batch: &Batch,
        pass: &mut Pass,
    ) -> Result<Var> {
        match self.config.architecture {
            Architecture::Tn => {
                let logits =
                    transformer::forward(&self.config, g, b, &batch.src, &batch.tgt_in, pass)?
                        .logits;
                let (targets, weights) = batch.targets_batch_major();
                g.softmax_cross_entropy(logits, &targets, &weights)
            }
            _ => {
                let enc = rnn::encode(&self.config, g, b, &batch.src, pass)?;
                let mut dec = rnn::Decoder::new(&self.config, g, b, &enc)?;
                let mut logits = Vec::with_capacity(batch.max_tgt());
                for i in 0..batch.max_tgt() {
                    let (y_prev, _) = column(&batch.tgt_in, i);
                    logits.push(dec.step(g, &y_prev, pass)?.logits);
                }
                let all = g.concat_rows(&logits)?;
                let (targets, weights) = batch.targets_step_major();
                g.softmax_cross_entropy(all, &targets, &weights)
            }
        }
    }

    /// Loss of a batch as a plain number, in eval mode.
    pub fn eval_loss(&self, batch: &Batch) -> Result<Real> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let l = self.loss(&mut g, &b, batch, &mut Pass::eval())?;
        Ok(g.value(l).data()[0])
    }

    /// Greedy decoding of one word.
    pub fn transduce_greedy(&self, word: &str) -> Result<Transduction> {
        let ids = self.vocab.encode(word);
        if ids.is_empty() {
            return Err(Error::EmptyInput("cannot transduce an empty word".into()));
        }
        Ok(self.transduce_ids(&[ids])?.remove(0))
    }

    /// Greedy decoding of many words, batched.
    pub fn transduce_batch<S: AsRef<str>>(
        &self,
        words: &[S],
        batch_size: usize,
    ) -> Result<Vec<Transduction>> {
        let encoded: Vec<Vec<usize>> = words
            .iter()
            .map(|w| self.vocab.encode(w.as_ref()))
            .collect();
        if encoded.iter().any(Vec::is_empty) {
            return Err(Error::EmptyInput("cannot transduce an empty word".into()));
        }
        let mut out = Vec::with_capacity(words.len());
        for chunk in encoded.chunks(batch_size.max(1)) {
            out.extend(self.transduce_ids(chunk)?);
        }
        Ok(out)
    }

    fn transduce_ids(&self, sources: &[Vec<usize>]) -> Result<Vec<Transduction>> {
        let src: Vec<Vec<usize>> = sources.iter().map(|s| wrap(s)).collect();
        let (ids, attention, truncated) = match self.config.architecture {
            Architecture::Tn => transformer::greedy(&self.config, &self.params, &src)?,
            _ => rnn::greedy(&self.config, &self.params, &src)?,
        };
        Ok(ids
            .into_iter()
            .zip(attention)
            .zip(truncated)
            .map(|((ids, attention), truncated)| Transduction {
                output: self.vocab.decode(&ids),
                ids,
                attention,
                truncated,
            })
            .collect())
    }

    /// Teacher-forced pass over `source` with the given target `prefix`
    /// (raw ids, no specials). Returns one distribution per position of
    /// `BOS prefix`.
    pub fn trace(&self, source: &[usize], prefix: &[usize]) -> Result<Trace> {
        if source.is_empty() {
            return Err(Error::EmptyInput("empty source".into()));
        }
        let src = vec![wrap(source)];
        let tgt_in = vec![std::iter::once(BOS)
            .chain(prefix.iter().copied())
            .collect::<Vec<_>>()];
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let mut pass = Pass::eval();
        match self.config.architecture {
            Architecture::Tn => {
                let out = transformer::forward(&self.config, &mut g, &b, &src, &tgt_in, &mut pass)?;
                let probs = g.softmax(out.logits)?;
                let distributions = g
                    .value(probs)
                    .data()
                    .chunks(self.vocab.len())
                    .map(<[Real]>::to_vec)
                    .collect();
                let attention = transformer::head_mean(
                    &g,
                    out.cross_attention,
                    self.config.num_heads,
                    0,
                    tgt_in[0].len(),
                    src[0].len(),
                )?;
                Ok(Trace {
                    distributions,
                    contexts: Vec::new(),
                    attention,
                })
            }
            _ => {
                let enc = rnn::encode(&self.config, &mut g, &b, &src, &mut pass)?;
                let mut dec = rnn::Decoder::new(&self.config, &mut g, &b, &enc)?;
                let mut distributions = Vec::new();
                let mut contexts = Vec::new();
                let mut rows = Vec::new();
                for &y in &tgt_in[0] {
                    let step = dec.step(&mut g, &[y], &mut pass)?;
                    let p = g.softmax(step.logits)?;
                    distributions.push(g.value(p).data().to_vec());
                    contexts.push(g.value(step.context).data().to_vec());
                    rows.push(rnn::attention_row(&g, &enc, &step, 0));
                }
                let cols = src[0].len();
                let data = rows.into_iter().flatten().collect();
                Ok(Trace {
                    distributions,
                    contexts,
                    attention: AttentionMatrix::new(tgt_in[0].len(), cols, data)?,
                })
            }
        }
    }
}

/// Index of the largest entry, lowest index on ties.
pub(crate) fn argmax(xs: &[Real]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
