//! The acceptance suite: one PASS/FAIL line per criterion, non-zero exit
//! if any criterion fails.

use std::collections::HashMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use cognate_core::cells::EmbeddingTable;
use cognate_core::data::{
    load_cognate_tsv, split_dataset, split_sizes, write_cognate_tsv, CognatePair, DatasetSplit,
};
use cognate_core::embed::{ft_avg_embed, hashed_subword_vectors, CountWeighting};
use cognate_core::metrics::{char_bleu, corpus_bleu, string_similarity};
use cognate_core::models::{Architecture, Model, ModelConfig};
use cognate_core::oov::{
    build_shortlist, correct_all, detect_oov, evaluate_pipeline, synthetic_mt, ModelTransducer,
    SyntheticMtConfig,
};
use cognate_core::optim::{Optimizer, OptimizerKind, OptimizerSpec};
use cognate_core::params::ParamSet;
use cognate_core::synth::{default_rules, generate_pairs, random_word, SynthConfig};
use cognate_core::tensor::Tensor;
use cognate_core::text::{strip_trailing_repeats, wx_decode, wx_encode, CharVocab, Script};
use cognate_core::train::{
    average_checkpoints, evaluate, init_model, train, train_model, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[allow(dead_code)]
#[path = "../../core/tests/common/gradcheck.rs"]
mod gradcheck;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut checks = gradcheck::Checks::default();
    gradcheck::everything(&mut checks);
    let secs = start.elapsed().as_secs_f64();
    let failed = checks.failures();
    ensure(failed.is_empty(), || failed.join("; "))?;
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "{} checks, worst relative error {:.1e}, {secs:.1} s",
        checks.results.len(),
        checks.worst()
    ))
}

fn edit_oracle(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return a.len() + b.len();
    }
    if let Some(&d) = memo.get(&(a.len(), b.len())) {
        return d;
    }
    let sub = edit_oracle(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
    let d = sub
        .min(edit_oracle(&a[1..], b, memo) + 1)
        .min(edit_oracle(a, &b[1..], memo) + 1);
    memo.insert((a.len(), b.len()), d);
    d
}

/// Corpus BLEU-4 written out with plain string n-grams.
fn hand_corpus_bleu(preds: &[&str], refs: &[&str]) -> f64 {
    let grams = |s: &str, n: usize| -> Vec<String> {
        let w: Vec<&str> = s.split(' ').collect();
        if w.len() < n {
            return vec![];
        }
        (0..=w.len() - n).map(|i| w[i..i + n].join(" ")).collect()
    };
    let mut log_p = 0.0;
    for n in 1..=4 {
        let (mut hit, mut total) = (0.0, 0.0);
        for (p, r) in preds.iter().zip(refs) {
            let (pg, mut rg) = (grams(p, n), grams(r, n));
            total += pg.len() as f64;
            for g in pg {
                if let Some(i) = rg.iter().position(|x| *x == g) {
                    rg.remove(i);
                    hit += 1.0;
                }
            }
        }
        log_p += (hit / total).ln() / 4.0;
    }
    let c: usize = preds.iter().map(|p| p.split(' ').count()).sum();
    let r: usize = refs.iter().map(|p| p.split(' ').count()).sum();
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    100.0 * bp * log_p.exp()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let word = |rng: &mut ChaCha8Rng| -> String {
        let len = rng.gen_range(0..=8);
        (0..len)
            .map(|_| ['a', 'b', 'c', 'd'][rng.gen_range(0..4)])
            .collect()
    };
    for _ in 0..1000 {
        let (a, b) = (word(&mut rng), word(&mut rng));
        let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        let total = ca.len() + cb.len();
        let d = edit_oracle(&ca, &cb, &mut HashMap::new());
        let want = if total == 0 {
            100.0
        } else {
            (1.0 - d as f64 / total as f64) * 100.0
        };
        let got = string_similarity(&a, &b);
        ensure(got == want, || {
            format!("SS({a:?}, {b:?}) = {got}, oracle {want}")
        })?;
    }
    let ss = string_similarity("abcd", "abed");
    ensure(ss == 87.5, || format!("SS(abcd, abed) = {ss}"))?;
    let cfg = SynthConfig::default();
    for _ in 0..100 {
        let len = rng.gen_range(1..=12);
        let w = random_word(&mut rng, len, &cfg);
        let b = char_bleu(&w, &w, 4).map_err(|e| e.to_string())?;
        ensure(b == 100.0, || format!("char_bleu({w:?}, itself) = {b}"))?;
    }
    let preds = ["the cat sat on the mat today", "a dog ran in the park"];
    let refs = ["the cat sat on the mat", "the dog ran in the big park"];
    let split = |s: &[&str]| -> Vec<Vec<String>> {
        s.iter()
            .map(|x| x.split(' ').map(String::from).collect())
            .collect()
    };
    let got = corpus_bleu(&split(&preds), &split(&refs)).map_err(|e| e.to_string())?;
    let want = hand_corpus_bleu(&preds, &refs);
    ensure((got - want).abs() < 1e-9, || {
        format!("corpus BLEU {got} vs hand {want}")
    })?;
    Ok(format!("1000 SS pairs exact, fixture corpus BLEU {got:.6}"))
}

fn split_reproduction() -> Outcome {
    let pairs: Vec<CognatePair> = (0..4220)
        .map(|i| CognatePair::new(format!("s{i}"), format!("t{i}")))
        .collect();
    let split = split_dataset(&pairs, 0).map_err(|e| e.to_string())?;
    let got = (split.train.len(), split.validation.len(), split.test.len());
    ensure(got == (2849, 316, 1055) && split_sizes(4220) == got, || {
        format!("{got:?}")
    })?;
    Ok(format!("{} / {} / {}", got.0, got.1, got.2))
}

fn benchmark_split() -> DatasetSplit {
    let pairs = generate_pairs(7, 3000, &default_rules()).expect("generator");
    split_dataset(&pairs, 7).expect("split")
}

fn benchmark_config(arch: Architecture) -> (ModelConfig, TrainConfig, OptimizerSpec) {
    let (size, lr, epochs) = match arch {
        Architecture::Tn => (64, 1e-3, 30),
        _ => (48, 5e-3, 40),
    };
    let model = ModelConfig {
        hidden_dim: size,
        embed_dim: size,
        d_model: size,
        ffn_dim: 2 * size,
        dropout: 0.0,
        ..ModelConfig::for_architecture(arch)
    };
    let train = TrainConfig {
        batch_size: 32,
        max_epochs: epochs,
        seed: 7,
        ..Default::default()
    };
    (model, train, OptimizerSpec::adam(lr))
}

fn synthetic_end_to_end(split: &DatasetSplit, trained_am: &mut Option<Model>) -> Outcome {
    let start = Instant::now();
    let mut bleu = Vec::new();
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for arch in Architecture::ALL {
        let (model, tc, opt) = benchmark_config(arch);
        let t = Instant::now();
        let out = train(&model, &tc, &opt, split).map_err(|e| format!("{}: {e}", arch.label()))?;
        let report =
            evaluate(&out.best.model, &split.test, 64, false).map_err(|e| e.to_string())?;
        lines.push(format!(
            "{} BLEU {:.2} WA {:.2} ({} epochs, {:.0} s)",
            arch.label(),
            report.bleu,
            report.wa,
            out.history.len(),
            t.elapsed().as_secs_f64()
        ));
        if matches!(arch, Architecture::Am | Architecture::Tn)
            && (report.wa < 90.0 || report.bleu < 95.0)
        {
            failures.push(format!("{} below 90 WA / 95 BLEU", arch.label()));
        }
        if arch == Architecture::Am {
            *trained_am = Some(out.best.model.clone());
        }
        bleu.push((arch, report.bleu));
    }
    let (_, s2s) = bleu
        .iter()
        .find(|(a, _)| *a == Architecture::Seq2Seq)
        .copied()
        .unwrap();
    if !bleu
        .iter()
        .all(|&(a, b)| a == Architecture::Seq2Seq || b > s2s)
    {
        failures.push("seq2seq is not strictly lowest on BLEU".into());
    }
    let secs = start.elapsed().as_secs_f64();
    if secs > 1800.0 {
        failures.push(format!("took {secs:.0} s"));
    }
    let detail = format!("{}; total {secs:.0} s", lines.join("; "));
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}: {detail}", failures.join(", ")))
    }
}

fn embedding_initialisation(split: &DatasetSplit) -> Outcome {
    let size = 32;
    let all: Vec<CognatePair> = split
        .train
        .iter()
        .chain(&split.validation)
        .chain(&split.test)
        .cloned()
        .collect();
    let words: Vec<&str> = all
        .iter()
        .flat_map(|p| [p.source.as_str(), p.target.as_str()])
        .collect();
    let store = hashed_subword_vectors(&words, size, 11).map_err(|e| e.to_string())?;
    let model = ModelConfig {
        hidden_dim: size,
        embed_dim: size,
        dropout: 0.0,
        ..ModelConfig::for_architecture(Architecture::Am)
    };
    let tc = TrainConfig {
        batch_size: 32,
        max_epochs: 30,
        patience: 100,
        seed: 7,
        ..Default::default()
    };
    let zero = |v: &CharVocab| Ok(EmbeddingTable::zeros(v.len(), size));
    let ft = |v: &CharVocab| Ok(ft_avg_embed(&store, &words, v, CountWeighting::WordType)?.table);
    let mut results = Vec::new();
    for build in [&zero as &dyn Fn(&CharVocab) -> _, &ft] {
        let m = init_model(&model, &tc, split, Some(build)).map_err(|e| e.to_string())?;
        let out = train_model(
            m,
            &tc,
            &OptimizerSpec::adam(1e-3),
            &split.train,
            &split.validation,
        )
        .map_err(|e| e.to_string())?;
        let report =
            evaluate(&out.best.model, &split.validation, 64, false).map_err(|e| e.to_string())?;
        results.push((report.bleu, out.best.epoch));
    }
    let ((zero_bleu, zero_ep), (ft_bleu, ft_ep)) = (results[0], results[1]);
    let detail = format!(
        "zero BLEU {zero_bleu:.2} at epoch {zero_ep}; ft-avg BLEU {ft_bleu:.2} at epoch {ft_ep}"
    );
    ensure(ft_bleu >= zero_bleu && ft_ep <= zero_ep, || detail.clone())?;
    Ok(detail)
}

fn checkpoint_averaging() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let snapshots: Vec<ParamSet<f64>> = (0..9)
        .map(|_| {
            let mut p = ParamSet::new();
            p.insert("w", Tensor::uniform(vec![3, 4], 10.0, &mut rng));
            p.insert("b", Tensor::uniform(vec![5], 10.0, &mut rng));
            p
        })
        .collect();
    let avg = average_checkpoints(&snapshots, 6).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (name, t) in avg.iter() {
        for (i, &x) in t.data().iter().enumerate() {
            let mean = snapshots[3..]
                .iter()
                .map(|p| p.get(name).unwrap().data()[i])
                .sum::<f64>()
                / 6.0;
            worst = worst.max((x - mean).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("max deviation {worst:.1e}"))
}

fn first_step(spec: OptimizerSpec, value: f64, grad: f64) -> f64 {
    let mut p = ParamSet::new();
    p.insert("w", Tensor::scalar(value));
    p.get_mut("w").unwrap().accumulate_grad(&[grad]).unwrap();
    let mut opt = Optimizer::new(spec).unwrap();
    opt.begin_step(&mut p);
    opt.step(&mut p, 0.0).unwrap();
    p.get("w").unwrap().data()[0]
}

fn optimizer_steps() -> Outcome {
    let adam = first_step(OptimizerSpec::adam(1e-3), 0.0, 1.0);
    ensure((adam + 1e-3).abs() <= 1e-9, || {
        format!("Adam moved to {adam}")
    })?;
    let (theta, g) = (0.5, 0.8);
    for kind in OptimizerKind::ALL {
        let spec = OptimizerSpec::new(kind);
        let (lr, rho, eps) = (spec.lr, spec.rho, spec.eps);
        let want = match kind {
            OptimizerKind::Sgd | OptimizerKind::Momentum | OptimizerKind::Nesterov => {
                theta - lr * g
            }
            OptimizerKind::RmsProp => theta - lr * g / (((1.0 - rho) * g * g).sqrt() + eps),
            OptimizerKind::Adagrad => theta - lr * g / (g.abs() + eps),
            OptimizerKind::Adadelta => {
                theta - lr * g * eps.sqrt() / ((1.0 - rho) * g * g + eps).sqrt()
            }
            OptimizerKind::Adam => theta - lr * g / (g.abs() + eps),
        };
        let got = first_step(spec, theta, g);
        ensure((got - want).abs() <= 1e-12, || {
            format!("{}: {got} vs {want}", kind.name())
        })?;
    }
    Ok(format!("Adam step {adam:.12}; 7 closed forms match"))
}

fn post_processing() -> Outcome {
    let han = strip_trailing_repeats("Jatatatata", Script::Wx);
    ensure(han == "Jata", || format!("Jatatatata -> {han}"))?;
    let pool: Vec<char> = "aAkMtJ्टाझक".chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let len = rng.gen_range(0..=12);
        let s: String = (0..len)
            .map(|_| pool[rng.gen_range(0..pool.len())])
            .collect();
        for script in [Script::Raw, Script::Devanagari, Script::Wx] {
            let once = strip_trailing_repeats(&s, script);
            let twice = strip_trailing_repeats(&once, script);
            ensure(once == twice, || {
                format!("{s:?} ({script:?}): {once:?} then {twice:?}")
            })?;
        }
    }
    Ok("Jatatatata -> Jata; idempotent on 1000 strings".into())
}

fn aligned_rows(att: &cognate_core::models::AttentionMatrix, sources: &[usize]) -> Vec<usize> {
    (0..att.rows)
        .filter(|&r| {
            let row = att.row(r);
            let best = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            sources.contains(&best)
        })
        .collect()
}

fn oov_pipeline(split: &DatasetSplit, model: Option<&Model>) -> Outcome {
    let model = model.ok_or("no trained transducer from the synthetic run")?;
    let mt = synthetic_mt(&split.test, &SyntheticMtConfig::default()).map_err(|e| e.to_string())?;
    let transducer = ModelTransducer {
        model,
        script: Script::Wx,
    };
    let k = mt.frequent_words;
    let rows = evaluate_pipeline(&mt.records, &mt.monolingual, &[k], &transducer)
        .map_err(|e| e.to_string())?;
    let row = &rows[0];

    let shortlist = build_shortlist(&mt.monolingual, k).map_err(|e| e.to_string())?;
    let marker = |w: &str| -> cognate_core::Result<String> { Ok(format!("<{w}>")) };
    let marked = correct_all(&mt.records, &shortlist, &marker).map_err(|e| e.to_string())?;
    let real = correct_all(&mt.records, &shortlist, &transducer).map_err(|e| e.to_string())?;
    for ((rec, m), c) in mt.records.iter().zip(&marked).zip(&real) {
        let touched = aligned_rows(&rec.attention, &detect_oov(&rec.source, &shortlist));
        let kept: Vec<&String> = rec
            .baseline
            .iter()
            .enumerate()
            .filter(|(i, _)| !touched.contains(i))
            .map(|(_, t)| t)
            .collect();
        let unmarked: Vec<&String> = m.tokens.iter().filter(|t| !t.starts_with('<')).collect();
        ensure(unmarked == kept, || {
            format!("non-OOV tokens changed in {:?}", rec.source)
        })?;
        ensure(c.changed.iter().all(|i| touched.contains(i)), || {
            format!("stray change in {:?}", rec.source)
        })?;
    }
    let detail = format!(
        "k {k}: baseline {:.2} -> corrected {:.2} (delta {:+.2}), {} OOV tokens",
        row.baseline_bleu, row.corrected_bleu, row.delta, row.oov_tokens
    );
    ensure(row.delta >= 3.0, || detail.clone())?;
    Ok(detail)
}

fn codec(dir: &std::path::Path) -> Outcome {
    let path = dir.join("corpus.tsv");
    let pairs = generate_pairs(7, 3000, &default_rules()).map_err(|e| e.to_string())?;
    write_cognate_tsv(fs::File::create(&path).map_err(|e| e.to_string())?, &pairs)
        .map_err(|e| e.to_string())?;
    let loaded = load_cognate_tsv(&path).map_err(|e| e.to_string())?;
    let mut n = 0;
    for w in loaded.iter().flat_map(|p| [&p.source, &p.target]) {
        let dev = wx_decode(w).map_err(|e| format!("{w}: {e}"))?;
        let back = wx_encode(&dev).map_err(|e| format!("{dev}: {e}"))?;
        ensure(back == *w, || format!("{w} -> {dev} -> {back}"))?;
        n += 1;
    }
    let sanskrit = wx_encode("संस्कृत").map_err(|e| e.to_string())?;
    ensure(sanskrit == "saMskqwa", || format!("संस्कृत -> {sanskrit}"))?;
    let ka = wx_encode("कं").map_err(|e| e.to_string())?;
    ensure(ka == "kaM", || format!("कं -> {ka}"))?;
    Ok(format!("{n} words round-trip; anusvara -> M"))
}

fn determinism(dir: &std::path::Path) -> Outcome {
    let bin = env!("CARGO_BIN_EXE_cognate");
    let data = dir.join("det.tsv");
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin)
            .args(args)
            .env_remove("COGNATE_CHECKPOINT_DIR")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || {
            String::from_utf8_lossy(&out.stderr).into_owned()
        })
    };
    run(&[
        "synth-gen",
        "--seed",
        "7",
        "--n",
        "300",
        "--out",
        data.to_str().unwrap(),
    ])?;
    let mut files = Vec::new();
    for run_dir in ["a", "b"] {
        let ck = dir.join(run_dir);
        run(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--checkpoint-dir",
            ck.to_str().unwrap(),
            "--set",
            "model.hidden_dim=16",
            "--set",
            "model.embed_dim=16",
            "--set",
            "model.dropout=0.2",
            "--set",
            "train.max_epochs=3",
            "--average",
            "2",
        ])?;
        let read = |f: &str| fs::read(ck.join(f)).map_err(|e| format!("{f}: {e}"));
        files.push((
            read("am.ckpt")?,
            read("am.report.json")?,
            read("am.test.tsv")?,
        ));
    }
    ensure(files[0] == files[1], || "the two runs differ".into())?;
    Ok(format!(
        "checkpoint {} bytes, report {} bytes identical",
        files[0].0.len(),
        files[0].1.len()
    ))
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let split = benchmark_split();
    let mut am = None;
    let mut failed = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or(e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS ({detail})"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL ({why})");
            }
        }
    };
    report(1, "gradient correctness", &mut gradients);
    report(2, "metric oracles", &mut metric_oracles);
    report(3, "split reproduction", &mut split_reproduction);
    report(4, "synthetic end-to-end", &mut || {
        synthetic_end_to_end(&split, &mut am)
    });
    report(5, "embedding initialisation", &mut || {
        embedding_initialisation(&split)
    });
    report(6, "checkpoint averaging", &mut checkpoint_averaging);
    report(7, "optimizer unit steps", &mut optimizer_steps);
    report(8, "post-processing", &mut post_processing);
    report(9, "OOV pipeline", &mut || oov_pipeline(&split, am.as_ref()));
    report(10, "codec", &mut || codec(dir.path()));
    report(11, "determinism", &mut || determinism(dir.path()));
    if failed > 0 {
        println!("{failed} of 11 criteria failed");
        std::process::exit(1);
    }
    println!("all 11 criteria passed");
}
