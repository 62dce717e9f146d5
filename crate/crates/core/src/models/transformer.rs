//! Post-norm transformer encoder-decoder.

use rand::Rng;

use super::rnn::{pick, Decoded};
use super::{AttentionMatrix, ModelConfig, Pass};
use crate::autodiff::{Graph, Var};
use crate::cells::{Linear, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamSet};
use crate::tensor::Tensor;
use crate::text::{BOS, EOS, PAD};
use crate::Real;

/// Sinusoidal position table, `[length, d_model]` row-major.
pub fn positional_encoding(length: usize, d_model: usize) -> Result<Tensor<Real>> {
    if !d_model.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "d_model {d_model} must be even"
        )));
    }
    let mut data = Vec::with_capacity(length * d_model);
    for pos in 0..length {
        for k in 0..d_model / 2 {
            let angle = pos as Real / 10000f64.powf(2.0 * k as Real / d_model as Real);
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    Tensor::new(vec![length, d_model], data)
}

fn xavier(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn linear(
    p: &mut ParamSet<Real>,
    rng: &mut (impl Rng + ?Sized),
    input: usize,
    output: usize,
    name: String,
) {
    Linear::new(input, output, name).init(p, xavier(input, output), rng);
}

fn layer_norm_params(p: &mut ParamSet<Real>, d: usize, name: &str) {
    p.insert(format!("{name}.g"), Tensor::filled(vec![d], 1.0));
    p.insert(format!("{name}.b"), Tensor::zeros(vec![d]));
}

fn attention_params(p: &mut ParamSet<Real>, rng: &mut (impl Rng + ?Sized), d: usize, prefix: &str) {
    for part in ["q", "k", "v", "o"] {
        linear(p, rng, d, d, format!("{prefix}.{part}"));
    }
}

pub(super) fn init<R: Rng + ?Sized>(
    cfg: &ModelConfig,
    vocab: usize,
    p: &mut ParamSet<Real>,
    rng: &mut R,
) {
    let (d, f) = (cfg.d_model, cfg.ffn_dim);
    p.insert("emb", Tensor::uniform(vec![vocab, d], 1.0, rng));
    for l in 0..cfg.num_layers {
        let pre = format!("tn.enc.l{l}");
        attention_params(p, rng, d, &format!("{pre}.self"));
        layer_norm_params(p, d, &format!("{pre}.ln1"));
        linear(p, rng, d, f, format!("{pre}.ff1"));
        linear(p, rng, f, d, format!("{pre}.ff2"));
        layer_norm_params(p, d, &format!("{pre}.ln2"));
    }
    for l in 0..cfg.num_layers {
        let pre = format!("tn.dec.l{l}");
        attention_params(p, rng, d, &format!("{pre}.self"));
        layer_norm_params(p, d, &format!("{pre}.ln1"));
        attention_params(p, rng, d, &format!("{pre}.cross"));
        layer_norm_params(p, d, &format!("{pre}.ln2"));
        linear(p, rng, d, f, format!("{pre}.ff1"));
        linear(p, rng, f, d, format!("{pre}.ff2"));
        layer_norm_params(p, d, &format!("{pre}.ln3"));
    }
    linear(p, rng, d, vocab, "out".to_string());
}

fn affine(g: &mut Graph<Real>, b: &Bindings, prefix: &str, x: Var) -> Result<Var> {
    let y = g.matmul(x, b.get(&format!("{prefix}.w"))?)?;
    g.add_bias(y, b.get(&format!("{prefix}.b"))?)
}

fn norm(g: &mut Graph<Real>, b: &Bindings, prefix: &str, x: Var) -> Result<Var> {
    let gain = b.get(&format!("{prefix}.g"))?;
    let bias = b.get(&format!("{prefix}.b"))?;
    g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
}

/// Multi-head scaled dot-product attention with projections
/// `{prefix}.q/k/v/o`.
///
/// `queries` is `[batch * tq, d]`, `keys` is `[batch * tk, d]`; `key_mask`
/// (`batch * tk`) hides padding and `causal` hides keys after the query
/// position. Returns the projected output `[batch * tq, d]` and the weights
/// `[batch * heads, tq, tk]`.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    g: &mut Graph<Real>,
    b: &Bindings,
    prefix: &str,
    queries: Var,
    keys: Var,
    batch: usize,
    heads: usize,
    key_mask: &[bool],
    causal: bool,
) -> Result<(Var, Var)> {
    let d = g.value(queries).cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::InvalidArgument(format!(
            "d_model {d} not divisible by {heads} heads"
        )));
    }
    let (tq, tk) = (
        g.value(queries).rows() / batch,
        g.value(keys).rows() / batch,
    );
    if key_mask.len() != batch * tk {
        return Err(Error::InvalidShape(format!(
            "key mask of {} for {batch}x{tk} keys",
            key_mask.len()
        )));
    }
    let dk = d / heads;
    let split = |g: &mut Graph<Real>, x: Var, t: usize| -> Result<Var> {
        let s = g.swap_mid(x, batch, t, heads, dk)?;
        g.reshape(s, vec![batch * heads, t, dk])
    };
    let q = affine(g, b, &format!("{prefix}.q"), queries)?;
    let k = affine(g, b, &format!("{prefix}.k"), keys)?;
    let v = affine(g, b, &format!("{prefix}.v"), keys)?;
    let (q, k, v) = (split(g, q, tq)?, split(g, k, tk)?, split(g, v, tk)?);
    let scores = g.bmm(q, k, true)?;
    let scores = g.scale(scores, 1.0 / (dk as Real).sqrt())?;
    let mut mask = Vec::with_capacity(batch * heads * tq * tk);
    for bi in 0..batch {
        for _ in 0..heads {
            for i in 0..tq {
                mask.extend((0..tk).map(|j| key_mask[bi * tk + j] && (!causal || j <= i)));
            }
        }
    }
    let probs = g.softmax_masked(scores, Some(&mask))?;
    let ctx = g.bmm(probs, v, false)?;
    let ctx = g.swap_mid(ctx, batch, heads, tq, dk)?;
    let ctx = g.reshape(ctx, vec![batch * tq, d])?;
    let out = affine(g, b, &format!("{prefix}.o"), ctx)?;
    Ok((out, probs))
}

/// Padded `[batch * len]` ids (batch-major), the padding mask and the length.
fn pad_ids(seqs: &[Vec<usize>]) -> (Vec<usize>, Vec<bool>, usize) {
    let t = seqs.iter().map(Vec::len).max().unwrap_or(0);
    let mut ids = Vec::with_capacity(seqs.len() * t);
    let mut mask = Vec::with_capacity(seqs.len() * t);
    for s in seqs {
        for i in 0..t {
            ids.push(s.get(i).copied().unwrap_or(PAD));
            mask.push(i < s.len());
        }
    }
    (ids, mask, t)
}

fn embed(
    g: &mut Graph<Real>,
    b: &Bindings,
    ids: &[usize],
    batch: usize,
    t: usize,
    d: usize,
    pass: &mut Pass,
) -> Result<Var> {
    let e = g.gather_rows(b.get("emb")?, ids)?;
    let pe = positional_encoding(t, d)?;
    let tiled: Vec<Real> = (0..batch).flat_map(|_| pe.data().iter().copied()).collect();
    let x = g.add_const(e, &tiled)?;
    pass.drop(g, x)
}

pub(super) struct Encoded {
    out: Var,
    mask: Vec<bool>,
}

fn encode(
    cfg: &ModelConfig,
    g: &mut Graph<Real>,
    b: &Bindings,
    src: &[Vec<usize>],
    pass: &mut Pass,
) -> Result<Encoded> {
    if src.is_empty() || src.iter().any(Vec::is_empty) {
        return Err(Error::EmptyInput("empty source".into()));
    }
    let batch = src.len();
    let (ids, mask, t) = pad_ids(src);
    let mut x = embed(g, b, &ids, batch, t, cfg.d_model, pass)?;
    for l in 0..cfg.num_layers {
        let pre = format!("tn.enc.l{l}");
        let (a, _) = multi_head_attention(
            g,
            b,
            &format!("{pre}.self"),
            x,
            x,
            batch,
            cfg.num_heads,
            &mask,
            false,
        )?;
        let a = pass.drop(g, a)?;
        let r = g.add(x, a)?;
        x = norm(g, b, &format!("{pre}.ln1"), r)?;
        let f = feed_forward(g, b, &pre, x)?;
        let f = pass.drop(g, f)?;
        let r = g.add(x, f)?;
        x = norm(g, b, &format!("{pre}.ln2"), r)?;
    }
    Ok(Encoded { out: x, mask })
}

fn feed_forward(g: &mut Graph<Real>, b: &Bindings, pre: &str, x: Var) -> Result<Var> {
    let h = affine(g, b, &format!("{pre}.ff1"), x)?;
    let h = g.relu(h)?;
    affine(g, b, &format!("{pre}.ff2"), h)
}

/// Encoder output rows `[batch * steps, d_model]` for inspection.
pub fn encoder_output(
    cfg: &ModelConfig,
    params: &ParamSet<Real>,
    src: &[Vec<usize>],
) -> Result<Vec<Real>> {
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let enc = encode(cfg, &mut g, &b, src, &mut Pass::eval())?;
    Ok(g.value(enc.out).data().to_vec())
}

pub(super) struct TnOut {
    /// `[batch * tgt_len, vocab]`, batch-major.
    pub logits: Var,
    /// Last decoder layer's encoder attention, `[batch * heads, tgt_len, src_len]`.
    pub cross_attention: Var,
}

fn decode(
    cfg: &ModelConfig,
    g: &mut Graph<Real>,
    b: &Bindings,
    enc: &Encoded,
    tgt_in: &[Vec<usize>],
    pass: &mut Pass,
) -> Result<TnOut> {
    let batch = tgt_in.len();
    let (ids, mask, t) = pad_ids(tgt_in);
    let mut y = embed(g, b, &ids, batch, t, cfg.d_model, pass)?;
    let mut cross = None;
    for l in 0..cfg.num_layers {
        let pre = format!("tn.dec.l{l}");
        let (a, _) = multi_head_attention(
            g,
            b,
            &format!("{pre}.self"),
            y,
            y,
            batch,
            cfg.num_heads,
            &mask,
            true,
        )?;
        let a = pass.drop(g, a)?;
        let r = g.add(y, a)?;
        y = norm(g, b, &format!("{pre}.ln1"), r)?;
        let (c, probs) = multi_head_attention(
            g,
            b,
            &format!("{pre}.cross"),
            y,
            enc.out,
            batch,
            cfg.num_heads,
            &enc.mask,
            false,
        )?;
        cross = Some(probs);
        let c = pass.drop(g, c)?;
        let r = g.add(y, c)?;
        y = norm(g, b, &format!("{pre}.ln2"), r)?;
        let f = feed_forward(g, b, &pre, y)?;
        let f = pass.drop(g, f)?;
        let r = g.add(y, f)?;
        y = norm(g, b, &format!("{pre}.ln3"), r)?;
    }
    let logits = affine(g, b, "out", y)?;
    Ok(TnOut {
        logits,
        cross_attention: cross.expect("at least one layer"),
    })
}

pub(super) fn forward(
    cfg: &ModelConfig,
    g: &mut Graph<Real>,
    b: &Bindings,
    src: &[Vec<usize>],
    tgt_in: &[Vec<usize>],
    pass: &mut Pass,
) -> Result<TnOut> {
    let enc = encode(cfg, g, b, src, pass)?;
    decode(cfg, g, b, &enc, tgt_in, pass)
}

/// Head-averaged attention of word `b`, cropped to `rows x cols`.
pub(super) fn head_mean(
    g: &Graph<Real>,
    probs: Var,
    heads: usize,
    b: usize,
    rows: usize,
    cols: usize,
) -> Result<AttentionMatrix> {
    let shape = g.shape(probs);
    let (tq, tk) = (shape[1], shape[2]);
    let data = g.value(probs).data();
    let mut out = vec![0.0; rows * cols];
    for h in 0..heads {
        let base = (b * heads + h) * tq * tk;
        for i in 0..rows {
            for j in 0..cols {
                out[i * cols + j] += data[base + i * tk + j] / heads as Real;
            }
        }
    }
    AttentionMatrix::new(rows, cols, out)
}

pub(super) fn greedy(
    cfg: &ModelConfig,
    params: &ParamSet<Real>,
    src: &[Vec<usize>],
) -> Result<Decoded> {
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let mut pass = Pass::eval();
    let enc = encode(cfg, &mut g, &b, src, &mut pass)?;
    let batch = src.len();
    let mut prefix = vec![vec![BOS]; batch];
    let mut steps = vec![0usize; batch];
    let mut done = vec![false; batch];
    let mut outputs = vec![Vec::new(); batch];
    let mut last_cross = None;
    for _ in 0..cfg.max_decode_len {
        let out = decode(cfg, &mut g, &b, &enc, &prefix, &mut pass)?;
        let len = prefix[0].len();
        last_cross = Some(out.cross_attention);
        for bi in 0..batch {
            let next = pick(g.value(out.logits).row_slice(bi * len + len - 1));
            if !done[bi] {
                steps[bi] += 1;
                if next == EOS {
                    done[bi] = true;
                } else {
                    outputs[bi].push(next);
                }
            }
            prefix[bi].push(if done[bi] { EOS } else { next });
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }
    let cross = last_cross.expect("max_decode_len is positive");
    let attention = (0..batch)
        .map(|bi| head_mean(&g, cross, cfg.num_heads, bi, steps[bi], src[bi].len()))
        .collect::<Result<_>>()?;
    let truncated = done.iter().map(|d| !d).collect();
    Ok((outputs, attention, truncated))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positional_encoding_examples() {
        let pe = positional_encoding(2, 4).unwrap();
        assert_eq!(pe.row_slice(0), &[0.0, 1.0, 0.0, 1.0]);
        let r = pe.row_slice(1);
        assert!((r[0] - 0.8415).abs() < 1e-4 && (r[1] - 0.5403).abs() < 1e-4);
        assert!((r[2] - 1e-2).abs() < 1e-6 && (r[3] - 1.0).abs() < 1e-4);
        assert!(positional_encoding(5, 64)
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() <= 1.0));
        assert!(matches!(
            positional_encoding(3, 5),
            Err(Error::InvalidArgument(_))
        ));
    }
}
