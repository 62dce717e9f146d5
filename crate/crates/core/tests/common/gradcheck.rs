//! Reverse-mode gradients against central differences for every graph op,
//! the recurrent cells, both attention kinds and all four architectures.

use cognate_core::autodiff::{finite_diff_check, Graph, Var};
use cognate_core::cells::{bidirectional_encode, CellKind, CellParams, Linear};
use cognate_core::models::rnn::{attend_bahdanau, AttentionParams, EncoderStates};
use cognate_core::models::transformer::multi_head_attention;
use cognate_core::models::{Architecture, Batch, Model, ModelConfig, Pass};
use cognate_core::params::{Bindings, ParamSet};
use cognate_core::tensor::Tensor;
use cognate_core::text::CharVocab;
use cognate_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
/// Whole-model losses carry ~1e-16 relative rounding through hundreds of
/// ops; a wider step keeps that noise below the tolerance on entries whose
/// gradient is near 1e-8.
pub const MODEL_EPS: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;

/// Maximum relative error of each named check.
#[derive(Default)]
pub struct Checks {
    pub results: Vec<(String, f64)>,
}

impl Checks {
    pub fn check<F>(&mut self, what: &str, p: &ParamSet<f64>, f: F)
    where
        F: Fn(&mut Graph<f64>, &Bindings) -> Result<Var>,
    {
        self.check_with(EPS, what, p, f)
    }

    pub fn check_with<F>(&mut self, eps: f64, what: &str, p: &ParamSet<f64>, f: F)
    where
        F: Fn(&mut Graph<f64>, &Bindings) -> Result<Var>,
    {
        let result = finite_diff_check(p, eps, |g, b| {
            let out = f(g, b)?;
            if g.value(out).len() == 1 {
                Ok(out)
            } else {
                project(g, out)
            }
        });
        match result {
            Ok(err) => self.results.push((what.to_string(), err)),
            Err(e) => self.results.push((format!("{what}: {e}"), f64::INFINITY)),
        }
    }

    pub fn failures(&self) -> Vec<String> {
        self.results
            .iter()
            .filter(|(_, err)| !(*err < TOLERANCE))
            .map(|(what, err)| format!("{what}: {err:e}"))
            .collect()
    }

    pub fn worst(&self) -> f64 {
        self.results.iter().map(|r| r.1).fold(0.0, f64::max)
    }

    pub fn assert_ok(&self) {
        let failed = self.failures();
        assert!(failed.is_empty(), "{}", failed.join("\n"));
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn params(shapes: &[(&str, Vec<usize>)], seed: u64) -> ParamSet<f64> {
    let mut r = rng(seed);
    let mut p = ParamSet::new();
    for (name, shape) in shapes {
        p.insert(*name, Tensor::uniform(shape.clone(), 1.0, &mut r));
    }
    p
}

/// Reduces any tensor to a scalar with fixed random weights, so every
/// output element feeds the loss with a distinct coefficient.
fn project(g: &mut Graph<f64>, x: Var) -> Result<Var> {
    let n = g.value(x).len();
    let mut r = rng(n as u64 + 101);
    let w: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let y = g.mul_const(x, w)?;
    g.sum(y)
}

pub fn elementwise_ops(c: &mut Checks) {
    let p = params(
        &[("a", vec![2, 3]), ("b", vec![2, 3]), ("bias", vec![3])],
        1,
    );
    c.check("add", &p, |g, b| g.add(b.get("a")?, b.get("b")?));
    c.check("sub", &p, |g, b| g.sub(b.get("a")?, b.get("b")?));
    c.check("mul", &p, |g, b| g.mul(b.get("a")?, b.get("b")?));
    c.check("add_bias", &p, |g, b| {
        g.add_bias(b.get("a")?, b.get("bias")?)
    });
    c.check("affine", &p, |g, b| g.affine(b.get("a")?, 1.7, -0.3));
    c.check("scale", &p, |g, b| g.scale(b.get("a")?, -2.5));
    c.check("one_minus", &p, |g, b| g.one_minus(b.get("a")?));
    c.check("tanh", &p, |g, b| g.tanh(b.get("a")?));
    c.check("sigmoid", &p, |g, b| g.sigmoid(b.get("a")?));
    c.check("add_const", &p, |g, b| {
        g.add_const(b.get("a")?, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    });
    c.check("sum", &p, |g, b| g.sum(b.get("a")?));
    c.check("dot", &p, |g, b| g.dot(b.get("a")?, b.get("b")?));
    c.check("blend_rows", &p, |g, b| {
        g.blend_rows(b.get("a")?, b.get("b")?, &[0.25, 1.0])
    });

    let mut p = ParamSet::new();
    p.insert("x", Tensor::row(&[-1.3, -0.2, 0.4, 2.0]));
    c.check("relu away from the kink", &p, |g, b| g.relu(b.get("x")?));
}

pub fn matrix_ops(c: &mut Checks) {
    let p = params(
        &[
            ("a", vec![2, 3]),
            ("w", vec![3, 4]),
            ("x", vec![2, 2, 3]),
            ("y", vec![2, 3, 2]),
            ("z", vec![2, 2, 3]),
        ],
        2,
    );
    c.check("matmul", &p, |g, b| g.matmul(b.get("a")?, b.get("w")?));
    c.check("matmul batched lhs", &p, |g, b| {
        g.matmul(b.get("x")?, b.get("w")?)
    });
    c.check("bmm", &p, |g, b| g.bmm(b.get("x")?, b.get("y")?, false));
    c.check("bmm transposed", &p, |g, b| {
        g.bmm(b.get("x")?, b.get("z")?, true)
    });
    c.check("concat_cols", &p, |g, b| {
        g.concat_cols(&[b.get("a")?, b.get("a")?])
    });
    c.check("concat_rows", &p, |g, b| {
        let w = b.get("w")?;
        let wt = g.slice_cols(w, 0, 3)?;
        g.concat_rows(&[b.get("a")?, wt])
    });
    c.check("slice_cols", &p, |g, b| g.slice_cols(b.get("w")?, 1, 2));
    c.check("gather_rows", &p, |g, b| {
        g.gather_rows(b.get("w")?, &[2, 0, 2])
    });
    c.check("reshape", &p, |g, b| g.reshape(b.get("x")?, vec![4, 3]));
    c.check("add_repeat_rows", &p, |g, b| {
        let x = g.reshape(b.get("x")?, vec![4, 3])?;
        g.add_repeat_rows(x, b.get("a")?, 2)
    });
    c.check("swap_mid", &p, |g, b| g.swap_mid(b.get("x")?, 1, 2, 2, 3));
}

pub fn normalising_ops_and_losses(c: &mut Checks) {
    let mut p = params(
        &[("x", vec![2, 4]), ("gain", vec![4]), ("bias", vec![4])],
        3,
    );
    c.check("softmax", &p, |g, b| g.softmax(b.get("x")?));
    let mask = [true, false, true, true, false, true, true, true];
    c.check("softmax_masked", &p, |g, b| {
        g.softmax_masked(b.get("x")?, Some(&mask))
    });
    c.check("softmax_cross_entropy", &p, |g, b| {
        g.softmax_cross_entropy(b.get("x")?, &[3, 1], &[0.5, 0.25])
    });
    c.check("cross_entropy", &p, |g, b| {
        let probs = g.softmax(b.get("x")?)?;
        let row = g.reshape(probs, vec![1, 8])?;
        g.cross_entropy(row, 5)
    });
    c.check("layer_norm", &p, |g, b| {
        g.layer_norm(b.get("x")?, b.get("gain")?, b.get("bias")?, 1e-6)
    });
    p.insert("flat", Tensor::row(&[0.3, -0.1, 0.7]));
    c.check("softmax of a vector", &p, |g, b| g.softmax(b.get("flat")?));
}

fn cell_params(
    kind: CellKind,
    input: usize,
    hidden: usize,
    prefix: &str,
    seed: u64,
) -> (CellParams, ParamSet<f64>) {
    let cell = CellParams::new(kind, input, hidden, prefix);
    let mut p = ParamSet::new();
    cell.init(&mut p, &mut rng(seed));
    // Larger weights than the training init so no gradient is negligible.
    let mut r = rng(seed + 1);
    for (_, t) in p.iter_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|x| *x = r.gen_range(-0.8..0.8));
    }
    (cell, p)
}

pub fn recurrent_cells(c: &mut Checks) {
    for kind in [CellKind::Lstm, CellKind::Gru] {
        let (cell, mut p) = cell_params(kind, 3, 4, "cell", 4);
        p.insert("x", Tensor::uniform(vec![2, 3], 1.0, &mut rng(5)));
        p.insert("h", Tensor::uniform(vec![2, 4], 1.0, &mut rng(6)));
        p.insert("c", Tensor::uniform(vec![2, 4], 1.0, &mut rng(7)));
        c.check(&format!("{kind:?} step"), &p, |g, b| {
            let bound = cell.bind(b)?;
            let mut s = bound.state_from(g, b.get("h")?);
            if s.c.is_some() {
                s.c = Some(b.get("c")?);
            }
            let s = bound.masked_step(g, b.get("x")?, s, &[1.0, 0.0])?;
            let s = bound.step(g, b.get("x")?, s)?;
            match s.c {
                Some(c) => g.concat_cols(&[s.h, c]),
                None => Ok(s.h),
            }
        });
    }

    let (fwd, mut p) = cell_params(CellKind::Lstm, 3, 2, "fwd", 8);
    let (bwd, q) = cell_params(CellKind::Gru, 3, 2, "bwd", 9);
    for (name, t) in q.iter() {
        p.insert(name.clone(), t.clone());
    }
    p.insert("seq", Tensor::uniform(vec![3, 2, 3], 1.0, &mut rng(10)));
    let masks = vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 0.0]];
    c.check("bidirectional_encode", &p, |g, b| {
        let seq = b.get("seq")?;
        let steps: Vec<Var> = (0..3)
            .map(|t| {
                let flat = g.reshape(seq, vec![6, 3])?;
                g.gather_rows(flat, &[2 * t, 2 * t + 1])
            })
            .collect::<Result<_>>()?;
        let out = bidirectional_encode(g, &steps, Some(&masks), &fwd.bind(b)?, &bwd.bind(b)?)?;
        let mut all = out.states.clone();
        all.push(out.fwd_final);
        all.push(out.bwd_final);
        g.concat_cols(&all)
    });
}

pub fn attention(c: &mut Checks) {
    let p = params(
        &[
            ("att.w_s", vec![3, 4]),
            ("att.w_h", vec![2, 4]),
            ("att.v", vec![4, 1]),
            ("s", vec![2, 3]),
            ("memory", vec![2, 3, 2]),
            ("final", vec![2, 2]),
        ],
        11,
    );
    c.check("attend_bahdanau", &p, |g, b| {
        let att = AttentionParams::bind(b)?;
        let mask = vec![true, true, true, true, true, false];
        let enc = EncoderStates::new(g, b.get("memory")?, mask, b.get("final")?, Some(att.w_h))?;
        let (ctx, alpha) = attend_bahdanau(g, b.get("s")?, &enc, &att)?;
        g.concat_cols(&[ctx, alpha])
    });

    let mut p = ParamSet::new();
    let mut r = rng(12);
    for part in ["q", "k", "v", "o"] {
        Linear::new(4, 4, format!("mha.{part}")).init(&mut p, 0.8, &mut r);
    }
    for (_, t) in p.iter_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|x| *x = r.gen_range(-0.8..0.8));
    }
    // The key bias shifts every score of a row equally, which softmax
    // cancels: its true gradient is exactly zero.
    p.get_mut("mha.k.b").unwrap().set_requires_grad(false);
    p.insert("queries", Tensor::uniform(vec![6, 4], 1.0, &mut r));
    p.insert("keys", Tensor::uniform(vec![4, 4], 1.0, &mut r));
    c.check("cross attention", &p, |g, b| {
        let mask = [true, true, true, false];
        let (out, probs) = multi_head_attention(
            g,
            b,
            "mha",
            b.get("queries")?,
            b.get("keys")?,
            2,
            2,
            &mask,
            false,
        )?;
        let flat = g.reshape(probs, vec![4 * 3, 2])?;
        let out2 = g.reshape(out, vec![12, 2])?;
        g.concat_cols(&[out2, flat])
    });
    c.check("causal self attention", &p, |g, b| {
        let q = b.get("queries")?;
        let (out, _) = multi_head_attention(g, b, "mha", q, q, 2, 2, &[true; 6], true)?;
        Ok(out)
    });
}

fn tiny_model(arch: Architecture, cell: CellKind) -> Model {
    let cfg = ModelConfig {
        architecture: arch,
        cell,
        hidden_dim: 4,
        embed_dim: 3,
        dropout: 0.0,
        num_layers: 1,
        num_heads: 2,
        d_model: 8,
        ffn_dim: 8,
        chunk_size: 2,
        max_decode_len: 8,
        ..ModelConfig::for_architecture(arch)
    };
    let vocab = CharVocab::from_symbols("abcd".chars());
    let mut model = Model::new(cfg, vocab, &mut rng(13)).unwrap();
    let mut r = rng(14);
    for (name, t) in model.params.iter_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|x| *x = r.gen_range(-0.6..0.6));
        if name.ends_with(".k.b") {
            t.set_requires_grad(false);
        }
    }
    model
}

pub fn architectures(c: &mut Checks) {
    let cases = [
        (Architecture::Seq2Seq, CellKind::Lstm),
        (Architecture::Am, CellKind::Lstm),
        (Architecture::Am, CellKind::Gru),
        (Architecture::Han, CellKind::Lstm),
        (Architecture::Han, CellKind::Gru),
        (Architecture::Tn, CellKind::Lstm),
    ];
    for (arch, cell) in cases {
        let model = tiny_model(arch, cell);
        let pairs: Vec<(Vec<usize>, Vec<usize>)> = [("abcd", "bcd"), ("da", "dab"), ("c", "ca")]
            .iter()
            .map(|(s, t)| (model.vocab.encode(s), model.vocab.encode(t)))
            .collect();
        let batch = Batch::new(&pairs).unwrap();
        let what = if arch == Architecture::Tn {
            arch.label().to_string()
        } else {
            format!("{} {cell:?}", arch.label())
        };
        c.check_with(MODEL_EPS, &what, &model.params, |g, b| {
            model.loss(g, b, &batch, &mut Pass::eval())
        });
    }
}

pub fn everything(c: &mut Checks) {
    elementwise_ops(c);
    matrix_ops(c);
    normalising_ops_and_losses(c);
    recurrent_cells(c);
    attention(c);
    architectures(c);
}
