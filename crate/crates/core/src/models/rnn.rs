//! Recurrent encoders (flat and hierarchical), additive attention and the
//! recurrent decoder shared by seq2seq, AM and HAN.

use rand::Rng;

use super::{argmax, column, Architecture, AttentionMatrix, ModelConfig, Pass};
use crate::autodiff::{Graph, Var};
use crate::cells::{bidirectional_encode, BoundCell, CellParams, CellState, Linear, INIT_SCALE};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamSet};
use crate::tensor::Tensor;
use crate::text::{BOS, EOS, PAD};
use crate::Real;

/// Bound parameters of additive attention:
/// `e_j = v · tanh(W_s s + W_h h_j)`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub w_s: Var,
    pub w_h: Var,
    pub v: Var,
}

impl AttentionParams {
    pub fn bind(b: &Bindings) -> Result<Self> {
        Ok(AttentionParams {
            w_s: b.get("att.w_s")?,
            w_h: b.get("att.w_h")?,
            v: b.get("att.v")?,
        })
    }
}

/// Encoder output for a batch.
#[derive(Debug, Clone)]
pub struct EncoderStates {
    /// `[batch, steps, width]`, one row per source position (or chunk).
    pub memory: Var,
    /// `memory @ W_h`, precomputed for attention.
    pub keys: Option<Var>,
    /// `batch * steps` flags, false on padding.
    pub mask: Vec<bool>,
    /// `[batch, width]` summary of the whole word.
    pub final_state: Var,
    pub batch: usize,
    pub steps: usize,
    pub width: usize,
    /// Source lengths in characters (with BOS/EOS).
    pub src_lens: Vec<usize>,
    han: Option<HanLevels>,
}

#[derive(Debug, Clone)]
struct HanLevels {
    /// `[batch * chunks, chunk_size]` character weights inside each chunk.
    beta: Var,
    chunk_size: usize,
}

impl EncoderStates {
    /// Wraps a `[batch, steps, width]` memory. Keys are computed when `w_h`
    /// is given.
    pub fn new(
        g: &mut Graph<Real>,
        memory: Var,
        mask: Vec<bool>,
        final_state: Var,
        w_h: Option<Var>,
    ) -> Result<Self> {
        let shape = g.shape(memory).to_vec();
        if shape.len() != 3 || mask.len() != shape[0] * shape[1] {
            return Err(Error::InvalidShape(format!(
                "encoder memory {shape:?} with mask of {}",
                mask.len()
            )));
        }
        if shape[1] == 0 {
            return Err(Error::EmptyInput("no encoder states to attend over".into()));
        }
        let keys = w_h.map(|w| g.matmul(memory, w)).transpose()?;
        let src_lens = mask
            .chunks(shape[1])
            .map(|m| m.iter().filter(|&&x| x).count())
            .collect();
        Ok(EncoderStates {
            memory,
            keys,
            mask,
            final_state,
            batch: shape[0],
            steps: shape[1],
            width: shape[2],
            src_lens,
            han: None,
        })
    }
}

/// Context vector and attention weights for decoder state `s_prev`.
///
/// Returns `(c, alpha)` with `c: [batch, width]` and `alpha: [batch, steps]`.
pub fn attend_bahdanau(
    g: &mut Graph<Real>,
    s_prev: Var,
    enc: &EncoderStates,
    p: &AttentionParams,
) -> Result<(Var, Var)> {
    let keys = match enc.keys {
        Some(k) => k,
        None => g.matmul(enc.memory, p.w_h)?,
    };
    let (bsz, t) = (enc.batch, enc.steps);
    let q = g.matmul(s_prev, p.w_s)?;
    let keys = g.reshape(keys, vec![bsz * t, g.value(q).cols()])?;
    let pre = g.add_repeat_rows(keys, q, t)?;
    let act = g.tanh(pre)?;
    let energies = g.matmul(act, p.v)?;
    let energies = g.reshape(energies, vec![bsz, t])?;
    let alpha = g.softmax_masked(energies, Some(&enc.mask))?;
    let a3 = g.reshape(alpha, vec![bsz, 1, t])?;
    let c = g.bmm(a3, enc.memory, false)?;
    let c = g.reshape(c, vec![bsz, enc.width])?;
    Ok((c, alpha))
}

/// Sizes of consecutive chunks of a `len`-character word; the last chunk
/// is the remainder.
pub fn chunk_sizes(len: usize, chunk_size: usize) -> Result<Vec<usize>> {
    if chunk_size < 1 {
        return Err(Error::InvalidArgument(
            "chunk_size must be at least 1".into(),
        ));
    }
    if len == 0 {
        return Err(Error::EmptyInput("word has no characters".into()));
    }
    Ok((0..len)
        .step_by(chunk_size)
        .map(|s| chunk_size.min(len - s))
        .collect())
}

pub(super) fn init<R: Rng + ?Sized>(
    cfg: &ModelConfig,
    vocab: usize,
    p: &mut ParamSet<Real>,
    rng: &mut R,
) {
    let (h, e) = (cfg.hidden_dim, cfg.embed_dim);
    let d = 2 * h;
    p.insert("emb", Tensor::uniform(vec![vocab, e], INIT_SCALE, rng));
    match cfg.architecture {
        Architecture::Han => {
            for dir in ["fwd", "bwd"] {
                CellParams::new(cfg.cell, e, h, format!("han.char.{dir}")).init(p, rng);
            }
            p.insert("han.pool.w", Tensor::uniform(vec![d, h], INIT_SCALE, rng));
            p.insert("han.pool.b", Tensor::zeros(vec![h]));
            p.insert("han.pool.q", Tensor::uniform(vec![h, 1], INIT_SCALE, rng));
            for dir in ["fwd", "bwd"] {
                CellParams::new(cfg.cell, d, h, format!("han.chunk.{dir}")).init(p, rng);
            }
        }
        _ => {
            for l in 0..cfg.encoder_layers {
                let input = if l == 0 { e } else { d };
                for dir in ["fwd", "bwd"] {
                    CellParams::new(cfg.cell, input, h, format!("enc.l{l}.{dir}")).init(p, rng);
                }
            }
        }
    }
    for l in 0..cfg.decoder_layers {
        let input = if l == 0 { e + d } else { h };
        CellParams::new(cfg.cell, input, h, format!("dec.l{l}")).init(p, rng);
        Linear::new(d, h, format!("dec.init.l{l}")).init(p, INIT_SCALE, rng);
    }
    if cfg.architecture != Architecture::Seq2Seq {
        p.insert("att.w_s", Tensor::uniform(vec![h, h], INIT_SCALE, rng));
        p.insert("att.w_h", Tensor::uniform(vec![d, h], INIT_SCALE, rng));
        p.insert("att.v", Tensor::uniform(vec![h, 1], INIT_SCALE, rng));
    }
    Linear::new(h + d + e, vocab, "out").init(p, INIT_SCALE, rng);
}

fn bind_cells(
    cfg: &ModelConfig,
    b: &Bindings,
    prefix: &str,
    input: usize,
) -> Result<(BoundCell, BoundCell)> {
    let h = cfg.hidden_dim;
    Ok((
        CellParams::new(cfg.cell, input, h, format!("{prefix}.fwd")).bind(b)?,
        CellParams::new(cfg.cell, input, h, format!("{prefix}.bwd")).bind(b)?,
    ))
}

/// `[steps][batch, w]` states to one `[batch, steps, w]` tensor.
fn stack_batch_major(g: &mut Graph<Real>, states: &[Var], batch: usize) -> Result<Var> {
    let w = g.value(states[0]).cols();
    let t = states.len();
    let rows = g.concat_rows(states)?;
    let swapped = g.swap_mid(rows, 1, t, batch, w)?;
    g.reshape(swapped, vec![batch, t, w])
}

pub(super) fn encode(
    cfg: &ModelConfig,
    g: &mut Graph<Real>,
    b: &Bindings,
    src: &[Vec<usize>],
    pass: &mut Pass,
) -> Result<EncoderStates> {
    if src.is_empty() || src.iter().any(Vec::is_empty) {
        return Err(Error::EmptyInput("empty source".into()));
    }
    if cfg.architecture == Architecture::Han {
        return han_encode(cfg, g, b, src, pass);
    }
    let emb = b.get("emb")?;
    let bsz = src.len();
    let t_len = src.iter().map(Vec::len).max().unwrap_or(0);
    let mut masks = Vec::with_capacity(t_len);
    let mut inputs = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let (ids, m) = column(src, t);
        let e = g.gather_rows(emb, &ids)?;
        inputs.push(pass.drop(g, e)?);
        masks.push(m);
    }
    let mut top = None;
    for l in 0..cfg.encoder_layers {
        let input = if l == 0 {
            cfg.embed_dim
        } else {
            2 * cfg.hidden_dim
        };
        let (f, bw) = bind_cells(cfg, b, &format!("enc.l{l}"), input)?;
        if l > 0 {
            inputs = inputs
                .into_iter()
                .map(|x| pass.drop(g, x))
                .collect::<Result<_>>()?;
        }
        let out = bidirectional_encode(g, &inputs, Some(&masks), &f, &bw)?;
        inputs = out.states.clone();
        top = Some(out);
    }
    let top = top.expect("at least one encoder layer");
    let final_state = g.concat_cols(&[top.fwd_final, top.bwd_final])?;
    let memory = stack_batch_major(g, &top.states, bsz)?;
    let mask = src
        .iter()
        .flat_map(|s| (0..t_len).map(move |t| t < s.len()))
        .collect();
    let w_h = if cfg.architecture == Architecture::Am {
        Some(b.get("att.w_h")?)
    } else {
        None
    };
    EncoderStates::new(g, memory, mask, final_state, w_h)
}

/// Characters are grouped into chunks of `chunk_size`; a character-level
/// BiRNN with a learned pooling query turns each chunk into one vector, and
/// a chunk-level BiRNN over those vectors gives the decoder memory.
fn han_encode(
    cfg: &ModelConfig,
    g: &mut Graph<Real>,
    b: &Bindings,
    src: &[Vec<usize>],
    pass: &mut Pass,
) -> Result<EncoderStates> {
    let cs = cfg.chunk_size;
    if cs < 1 {
        return Err(Error::InvalidArgument(
            "chunk_size must be at least 1".into(),
        ));
    }
    let (h, d) = (cfg.hidden_dim, 2 * cfg.hidden_dim);
    let emb = b.get("emb")?;
    let bsz = src.len();
    let chunks: Vec<usize> = src.iter().map(|s| s.len().div_ceil(cs)).collect();
    let k_max = chunks.iter().copied().max().unwrap_or(0);
    let rows = bsz * k_max;

    // character level: batch of `bsz * k_max` chunks, `cs` steps each
    let mut inputs = Vec::with_capacity(cs);
    let mut masks = Vec::with_capacity(cs);
    let mut pool_mask = vec![false; rows * cs];
    for j in 0..cs {
        let mut ids = Vec::with_capacity(rows);
        let mut m = Vec::with_capacity(rows);
        for (bi, s) in src.iter().enumerate() {
            for k in 0..k_max {
                let pos = k * cs + j;
                let real = pos < s.len();
                ids.push(if real { s[pos] } else { PAD });
                m.push(if real { 1.0 } else { 0.0 });
                pool_mask[(bi * k_max + k) * cs + j] = real;
            }
        }
        let e = g.gather_rows(emb, &ids)?;
        inputs.push(pass.drop(g, e)?);
        masks.push(m);
    }
    let (f, bw) = bind_cells(cfg, b, "han.char", cfg.embed_dim)?;
    let chars = bidirectional_encode(g, &inputs, Some(&masks), &f, &bw)?;
    let hc = stack_batch_major(g, &chars.states, rows)?;
    let u = g.matmul(hc, b.get("han.pool.w")?)?;
    let u = g.reshape(u, vec![rows * cs, h])?;
    let u = g.add_bias(u, b.get("han.pool.b")?)?;
    let u = g.tanh(u)?;
    let scores = g.matmul(u, b.get("han.pool.q")?)?;
    let scores = g.reshape(scores, vec![rows, cs])?;
    let beta = g.softmax_masked(scores, Some(&pool_mask))?;
    let beta3 = g.reshape(beta, vec![rows, 1, cs])?;
    let pooled = g.bmm(beta3, hc, false)?;
    let pooled = g.reshape(pooled, vec![rows, d])?;

    // chunk level
    let mut chunk_inputs = Vec::with_capacity(k_max);
    let mut chunk_masks = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let idx: Vec<usize> = (0..bsz).map(|bi| bi * k_max + k).collect();
        chunk_inputs.push(g.gather_rows(pooled, &idx)?);
        chunk_masks.push(
            chunks
                .iter()
                .map(|&n| if k < n { 1.0 } else { 0.0 })
                .collect(),
        );
    }
    let (f, bw) = bind_cells(cfg, b, "han.chunk", d)?;
    let top = bidirectional_encode(g, &chunk_inputs, Some(&chunk_masks), &f, &bw)?;
    let final_state = g.concat_cols(&[top.fwd_final, top.bwd_final])?;
    let memory = stack_batch_major(g, &top.states, bsz)?;
    let mask = chunks
        .iter()
        .flat_map(|&n| (0..k_max).map(move |k| k < n))
        .collect();
    let mut enc = EncoderStates::new(g, memory, mask, final_state, Some(b.get("att.w_h")?))?;
    enc.src_lens = src.iter().map(Vec::len).collect();
    enc.han = Some(HanLevels {
        beta,
        chunk_size: cs,
    });
    Ok(enc)
}

pub(super) struct StepOut {
    pub logits: Var,
    pub context: Var,
    pub alpha: Option<Var>,
}

/// Recurrent decoder. Each step reads `[emb(y_prev) ; c]`; the output layer
/// sees `[s ; c ; emb(y_prev)]`. Without attention, `c` is the encoder's
/// final state at every step.
pub(super) struct Decoder<'e> {
    cells: Vec<BoundCell>,
    states: Vec<CellState>,
    emb: Var,
    att: Option<AttentionParams>,
    out_w: Var,
    out_b: Var,
    enc: &'e EncoderStates,
}

impl<'e> Decoder<'e> {
    pub fn new(
        cfg: &ModelConfig,
        g: &mut Graph<Real>,
        b: &Bindings,
        enc: &'e EncoderStates,
    ) -> Result<Self> {
        let (h, d, e) = (cfg.hidden_dim, 2 * cfg.hidden_dim, cfg.embed_dim);
        let mut cells = Vec::with_capacity(cfg.decoder_layers);
        let mut states = Vec::with_capacity(cfg.decoder_layers);
        for l in 0..cfg.decoder_layers {
            let input = if l == 0 { e + d } else { h };
            let cell = CellParams::new(cfg.cell, input, h, format!("dec.l{l}")).bind(b)?;
            let init = Linear::new(d, h, format!("dec.init.l{l}")).apply(g, b, enc.final_state)?;
            let h0 = g.tanh(init)?;
            states.push(cell.state_from(g, h0));
            cells.push(cell);
        }
        let att = if cfg.architecture == Architecture::Seq2Seq {
            None
        } else {
            Some(AttentionParams::bind(b)?)
        };
        Ok(Decoder {
            cells,
            states,
            emb: b.get("emb")?,
            att,
            out_w: b.get("out.w")?,
            out_b: b.get("out.b")?,
            enc,
        })
    }

    pub fn step(
        &mut self,
        g: &mut Graph<Real>,
        y_prev: &[usize],
        pass: &mut Pass,
    ) -> Result<StepOut> {
        let e = g.gather_rows(self.emb, y_prev)?;
        let e = pass.drop(g, e)?;
        let top = self.states.last().expect("decoder has layers").h;
        let (context, alpha) = match &self.att {
            Some(p) => {
                let (c, a) = attend_bahdanau(g, top, self.enc, p)?;
                (c, Some(a))
            }
            None => (self.enc.final_state, None),
        };
        let mut x = g.concat_cols(&[e, context])?;
        for (l, cell) in self.cells.iter().enumerate() {
            if l > 0 {
                x = pass.drop(g, x)?;
            }
            let s = cell.step(g, x, self.states[l])?;
            self.states[l] = s;
            x = s.h;
        }
        let top = pass.drop(g, x)?;
        let o = g.concat_cols(&[top, context, e])?;
        let o = g.matmul(o, self.out_w)?;
        let logits = g.add_bias(o, self.out_b)?;
        Ok(StepOut {
            logits,
            context,
            alpha,
        })
    }
}

/// Attention of word `b` over its own source characters for one step.
pub(super) fn attention_row(
    g: &Graph<Real>,
    enc: &EncoderStates,
    step: &StepOut,
    b: usize,
) -> Vec<Real> {
    let n = enc.src_lens[b];
    let Some(alpha) = step.alpha else {
        return vec![1.0 / n as Real; n];
    };
    let a = g.value(alpha).row_slice(b);
    match &enc.han {
        None => a[..n].to_vec(),
        Some(h) => {
            let beta = g.value(h.beta);
            (0..n)
                .map(|p| {
                    let (k, j) = (p / h.chunk_size, p % h.chunk_size);
                    a[k] * beta.row_slice(b * enc.steps + k)[j]
                })
                .collect()
        }
    }
}

/// Picks the next symbol, never PAD or BOS.
pub(super) fn pick(logits: &[Real]) -> usize {
    let mut masked = logits.to_vec();
    masked[PAD] = Real::NEG_INFINITY;
    masked[BOS] = Real::NEG_INFINITY;
    argmax(&masked)
}

pub(super) type Decoded = (Vec<Vec<usize>>, Vec<AttentionMatrix>, Vec<bool>);

pub(super) fn greedy(
    cfg: &ModelConfig,
    params: &ParamSet<Real>,
    src: &[Vec<usize>],
) -> Result<Decoded> {
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let mut pass = Pass::eval();
    let enc = encode(cfg, &mut g, &b, src, &mut pass)?;
    let mut dec = Decoder::new(cfg, &mut g, &b, &enc)?;
    let bsz = src.len();
    let mut y_prev = vec![BOS; bsz];
    let mut done = vec![false; bsz];
    let mut outputs = vec![Vec::new(); bsz];
    let mut rows: Vec<Vec<Real>> = vec![Vec::new(); bsz];
    for _ in 0..cfg.max_decode_len {
        let step = dec.step(&mut g, &y_prev, &mut pass)?;
        for bi in 0..bsz {
            if done[bi] {
                continue;
            }
            let next = pick(g.value(step.logits).row_slice(bi));
            rows[bi].extend(attention_row(&g, &enc, &step, bi));
            if next == EOS {
                done[bi] = true;
            } else {
                outputs[bi].push(next);
            }
            y_prev[bi] = next;
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }
    let attention = rows
        .into_iter()
        .zip(&enc.src_lens)
        .map(|(data, &n)| AttentionMatrix::new(data.len() / n, n, data))
        .collect::<Result<_>>()?;
    let truncated = done.iter().map(|d| !d).collect();
    Ok((outputs, attention, truncated))
}
