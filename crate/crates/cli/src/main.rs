use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use cognate_core::checkpoint::{
    load_checkpoint, load_embedding, save_checkpoint, save_embedding, write_atomic,
};
use cognate_core::config::RunConfig;
use cognate_core::data::{load_cognate_tsv, split_dataset, write_cognate_tsv, CognatePair};
use cognate_core::embed::{
    ft_avg_embed, hashed_subword_vectors, remap_embedding, train_char_lm, CharLMConfig,
    CountWeighting, LmDirection, WordVectorStore,
};
use cognate_core::metrics::{summary_table, EvalReport};
use cognate_core::models::{Architecture, Model};
use cognate_core::oov::{
    build_shortlist, correct_all, detokenize, evaluate_pipeline, format_pipeline_input,
    format_pipeline_table, load_pipeline_input, synthetic_mt, ModelTransducer, SyntheticMtConfig,
};
use cognate_core::report::{bar_chart, TrainingReport};
use cognate_core::synth::{default_rules, generate_pairs};
use cognate_core::text::{
    strip_trailing_repeats, wx_decode, wx_encode, CharVocab, ErrorTag, Script,
};
use cognate_core::train::{init_model, train_model, Checkpoint, MetricSnapshot};
use cognate_core::tune::{format_table, grid_search, GridAxis};

/// Environment variable naming the default checkpoint directory.
const CHECKPOINT_DIR_ENV: &str = "COGNATE_CHECKPOINT_DIR";

#[derive(Parser)]
#[command(
    name = "cognate",
    version,
    about = "Character-level cognate word transduction"
)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a transducer on a cognate TSV.
    Train(TrainArgs),
    /// Transduce words with a trained checkpoint.
    Transduce(TransduceArgs),
    /// Score models or prediction files (BLEU / SS / WA per model).
    Evaluate(EvaluateArgs),
    /// Pre-train a character embedding.
    #[command(subcommand)]
    PretrainEmbed(PretrainCommand),
    /// Train one model per combination of hyperparameter values.
    Tune(TuneArgs),
    /// Replace OOV words in sentence translations by their transductions.
    OovCorrect(OovArgs),
    /// Convert between Devanagari and WX.
    #[command(subcommand)]
    Wx(WxCommand),
    /// Generate a synthetic cognate corpus.
    SynthGen(SynthArgs),
    /// Count error categories in predictions.
    ErrorReport(ErrorReportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file (`[section]` headers, `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `model.hidden_dim=48`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Cognate TSV (overrides `paths.data`).
    #[arg(long)]
    data: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .with_context(|| format!("`{o}` is not KEY=VALUE"))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(d) = &self.data {
            cfg.paths.data = Some(d.clone());
        }
        cfg.check_paths()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Character embedding file or word vectors to initialise from
    /// (overrides `paths.vectors`).
    #[arg(long)]
    embedding: Option<PathBuf>,
    /// Where the checkpoint goes (default: `paths.checkpoints`, then
    /// $COGNATE_CHECKPOINT_DIR, then `checkpoints`)
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Where reports go (default: `paths.reports`, then the checkpoint directory)
    #[arg(long)]
    report_dir: Option<PathBuf>,
    /// Save the mean of the last K epoch snapshots instead of the best one.
    #[arg(long, value_name = "K")]
    average: Option<usize>,
    /// File stem for outputs (default: the architecture name).
    #[arg(long)]
    name: Option<String>,
    /// Also write an SVG of the loss curves.
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct TransduceArgs {
    #[arg(long)]
    model: PathBuf,
    /// Word to transduce (repeatable); reads one word per line from stdin
    /// when absent.
    #[arg(long)]
    word: Vec<String>,
    /// Print the attention matrix after each word.
    #[arg(long)]
    attention: bool,
    #[arg(long, value_enum, default_value_t = ScriptArg::Raw)]
    script: ScriptArg,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint to score on `--data` (repeatable).
    #[arg(long)]
    model: Vec<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Which part of `--data` to score.
    #[arg(long, value_enum, default_value_t = Part::All)]
    part: Part,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// `source<TAB>gold<TAB>prediction` file (repeatable).
    #[arg(long)]
    predictions: Vec<PathBuf>,
    /// Directory for per-item TSV reports.
    #[arg(long)]
    report_dir: Option<PathBuf>,
    /// Also write an SVG bar chart of BLEU per model.
    #[arg(long)]
    plot: bool,
    #[arg(long, value_enum, default_value_t = ScriptArg::Raw)]
    script: ScriptArg,
}

#[derive(Subcommand)]
enum PretrainCommand {
    /// Character language model; its input embedding is kept.
    Lm(LmArgs),
    /// Character vectors averaged from word vectors.
    Ftavg(FtAvgArgs),
}

#[derive(Args)]
struct LmArgs {
    /// Plain text corpus.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    window: usize,
    #[arg(long, default_value_t = 75)]
    hidden: usize,
    #[arg(long, default_value_t = 300)]
    embed_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 7)]
    patience: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Read context on both sides of the predicted character.
    #[arg(long)]
    bidirectional: bool,
}

#[derive(Args)]
struct FtAvgArgs {
    /// Word vectors in text format (`word v1 v2 ...`).
    #[arg(
        long,
        conflicts_with = "hashed_dim",
        required_unless_present = "hashed_dim"
    )]
    vectors: Option<PathBuf>,
    /// Build hashed subword vectors of this size over the corpus words
    /// instead of reading `--vectors`.
    #[arg(long)]
    hashed_dim: Option<usize>,
    /// Cognate TSV whose characters form the vocabulary.
    #[arg(long)]
    data: PathBuf,
    /// Whitespace-tokenised corpus giving word counts (default: the words
    /// of `--data`).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Weight each word by its corpus frequency.
    #[arg(long)]
    token_frequency: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Axis `key=v1,v2,...` (repeatable).
    #[arg(long = "axis", required = true)]
    axes: Vec<String>,
    /// Write the table here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OovArgs {
    #[arg(long)]
    model: PathBuf,
    /// `source<TAB>baseline[<TAB>reference]` per sentence.
    #[arg(long)]
    input: PathBuf,
    /// Attention sidecar, one `rows cols weights...` line per sentence.
    #[arg(long)]
    attention: PathBuf,
    /// Source-language text for the frequency shortlist.
    #[arg(long)]
    monolingual: PathBuf,
    /// Shortlist size (repeatable; the first one is used for `--output`).
    #[arg(long = "k", required = true)]
    sizes: Vec<usize>,
    /// Input with a corrected-translation column appended.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ScriptArg::Raw)]
    script: ScriptArg,
}

#[derive(Subcommand)]
enum WxCommand {
    /// Devanagari to WX.
    Encode { words: Vec<String> },
    /// WX to Devanagari.
    Decode { words: Vec<String> },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 3000)]
    n: usize,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a synthetic translation corpus as PREFIX.tsv, PREFIX.att
    /// and PREFIX.mono.
    #[arg(long, value_name = "PREFIX")]
    mt_prefix: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    sentences: usize,
}

#[derive(Args)]
struct ErrorReportArgs {
    /// `source<TAB>gold<TAB>prediction` file.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    predictions: Option<PathBuf>,
    #[arg(long, requires = "data")]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Per-item TSV with tags.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScriptArg {
    Devanagari,
    Wx,
    Raw,
}

impl From<ScriptArg> for Script {
    fn from(s: ScriptArg) -> Self {
        match s {
            ScriptArg::Devanagari => Script::Devanagari,
            ScriptArg::Wx => Script::Wx,
            ScriptArg::Raw => Script::Raw,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Part {
    All,
    Train,
    Validation,
    Test,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Transduce(a) => cmd_transduce(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::PretrainEmbed(PretrainCommand::Lm(a)) => cmd_pretrain_lm(a),
        Command::PretrainEmbed(PretrainCommand::Ftavg(a)) => cmd_pretrain_ftavg(a),
        Command::Tune(a) => cmd_tune(a),
        Command::OovCorrect(a) => cmd_oov(a),
        Command::Wx(c) => cmd_wx(c),
        Command::SynthGen(a) => cmd_synth(a),
        Command::ErrorReport(a) => cmd_error_report(a),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn read_pairs(path: &Path, script: Script) -> Result<Vec<CognatePair>> {
    let pairs = load_cognate_tsv(path).with_context(|| format!("reading {}", path.display()))?;
    if script != Script::Wx {
        return Ok(pairs);
    }
    pairs
        .into_iter()
        .map(|p| Ok(CognatePair::new(to_wx(&p.source)?, to_wx(&p.target)?)))
        .collect()
}

fn to_wx(word: &str) -> Result<String> {
    Ok(if Script::detect(word) == Script::Devanagari {
        wx_encode(word)?
    } else {
        word.to_string()
    })
}

fn checkpoint_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| cfg.paths.checkpoints.clone())
        .or_else(|| std::env::var_os(CHECKPOINT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("checkpoints"))
}

/// Greedy outputs, with trailing repeats stripped for HAN.
fn predict(model: &Model, words: &[&str], script: Script) -> Result<Vec<String>> {
    let out = model.transduce_batch(words, 64)?;
    Ok(out
        .into_iter()
        .map(|t| {
            if model.config.architecture == Architecture::Han {
                strip_trailing_repeats(&t.output, script)
            } else {
                t.output
            }
        })
        .collect())
}

fn score(model: &Model, pairs: &[CognatePair], script: Script) -> Result<EvalReport> {
    let sources: Vec<&str> = pairs.iter().map(|p| p.source.as_str()).collect();
    let preds = predict(model, &sources, script)?;
    let triples: Vec<(&str, &str, &str)> = pairs
        .iter()
        .zip(&preds)
        .map(|(p, o)| (p.source.as_str(), p.target.as_str(), o.as_str()))
        .collect();
    Ok(EvalReport::from_triples(&triples, true)?)
}

fn report_tsv(report: &EvalReport) -> Result<String> {
    let mut buf = Vec::new();
    report.write_tsv(&mut buf)?;
    Ok(String::from_utf8(buf)?)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let data = cfg
        .paths
        .data
        .clone()
        .context("no data file (use --data or paths.data)")?;
    let pairs = read_pairs(&data, cfg.script)?;
    let split = split_dataset(&pairs, cfg.split_seed)?;
    info!(
        "split {} pairs into {} / {} / {}",
        pairs.len(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    let vectors = a.embedding.clone().or_else(|| cfg.paths.vectors.clone());
    let embedding = |vocab: &CharVocab| -> cognate_core::Result<_> {
        let path = vectors.as_ref().expect("only called with a vectors path");
        match load_embedding(path) {
            Ok((from, table)) => remap_embedding(&table, &from, vocab),
            Err(cognate_core::Error::IncompatibleCheckpoint(_)) => {
                let store = WordVectorStore::load(path)?;
                Ok(ft_avg_embed::<&str>(&store, &[], vocab, CountWeighting::WordType)?.table)
            }
            Err(e) => Err(e),
        }
    };
    let init: Option<&dyn Fn(&_) -> _> = if vectors.is_some() {
        Some(&embedding)
    } else {
        None
    };
    let model = init_model(&cfg.model, &cfg.train, &split, init)?;
    let outcome = train_model(
        model,
        &cfg.train,
        &cfg.optimizer,
        &split.train,
        &split.validation,
    )?;

    let arch = cfg.model.architecture;
    let mut best = outcome.best.clone();
    if let Some(k) = a.average {
        best = Checkpoint {
            model: outcome.averaged(k)?,
            ..best
        };
    }
    let test = if split.test.is_empty() {
        None
    } else {
        Some(score(&best.model, &split.test, cfg.script)?)
    };

    let name = a.name.clone().unwrap_or_else(|| arch.name().to_string());
    let ckpt_dir = checkpoint_dir(a.checkpoint_dir, &cfg);
    let report_dir = a
        .report_dir
        .or_else(|| cfg.paths.reports.clone())
        .unwrap_or_else(|| ckpt_dir.clone());
    fs::create_dir_all(&ckpt_dir)?;
    let ckpt_path = ckpt_dir.join(format!("{name}.ckpt"));
    save_checkpoint(&best, &ckpt_path)?;

    let report = TrainingReport {
        architecture: arch.label().to_string(),
        history: outcome.history.clone(),
        best_epoch: outcome.best.epoch,
        stopped_early: outcome.stopped_early,
        validation: best.metrics,
        test: test.as_ref().map(MetricSnapshot::from),
    };
    fs::create_dir_all(&report_dir)?;
    report.save(report_dir.join(format!("{name}.report.json")))?;
    if let Some(t) = &test {
        write_file(
            &report_dir.join(format!("{name}.test.tsv")),
            &report_tsv(t)?,
        )?;
    }
    if a.plot {
        write_file(
            &report_dir.join(format!("{name}.loss.svg")),
            &report.loss_plot(),
        )?;
    }
    println!("checkpoint\t{}", ckpt_path.display());
    println!("best epoch\t{}", outcome.best.epoch);
    if let Some(t) = &test {
        println!("test\tBLEU {:.2}\tSS {:.2}\tWA {:.2}", t.bleu, t.ss, t.wa);
    }
    Ok(())
}

fn cmd_transduce(a: TransduceArgs) -> Result<()> {
    let ckpt =
        load_checkpoint(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let model = &ckpt.model;
    let script = Script::from(a.script);
    let words = if a.word.is_empty() {
        io::stdin().lock().lines().collect::<io::Result<Vec<_>>>()?
    } else {
        a.word
    };
    let mut out = io::stdout().lock();
    for word in words.iter().map(|w| w.trim()).filter(|w| !w.is_empty()) {
        let input = if script == Script::Wx {
            to_wx(word)?
        } else {
            word.to_string()
        };
        let t = model.transduce_greedy(&input)?;
        let output = if model.config.architecture == Architecture::Han {
            strip_trailing_repeats(&t.output, script)
        } else {
            t.output.clone()
        };
        writeln!(out, "{output}")?;
        if a.attention {
            let mut header = vec!["<s>".to_string()];
            header.extend(input.chars().map(String::from));
            header.push("</s>".into());
            writeln!(out, "#\t{}", header.join("\t"))?;
            let mut emitted: Vec<String> = t.output.chars().map(String::from).collect();
            emitted.push("</s>".into());
            for (i, label) in emitted.iter().enumerate().take(t.attention.rows) {
                let row: Vec<String> = t
                    .attention
                    .row(i)
                    .iter()
                    .map(|w| format!("{w:.4}"))
                    .collect();
                writeln!(out, "{label}\t{}", row.join("\t"))?;
            }
        }
    }
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<(String, String, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty()
            || line.starts_with('#')
            || (i == 0 && line.starts_with("source\t"))
        {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 3 {
            bail!(
                "{}:{}: expected source, gold and prediction columns",
                path.display(),
                i + 1
            );
        }
        out.push((f[0].to_string(), f[1].to_string(), f[2].to_string()));
    }
    Ok(out)
}

fn unique_name(names: &[String], wanted: &str) -> String {
    let mut name = wanted.to_string();
    let mut n = 2;
    while names.contains(&name) {
        name = format!("{wanted}-{n}");
        n += 1;
    }
    name
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    if a.model.is_empty() && a.predictions.is_empty() {
        bail!("nothing to evaluate: give --model with --data, or --predictions");
    }
    let script = Script::from(a.script);
    let mut names = Vec::new();
    let mut reports = Vec::new();
    if !a.model.is_empty() {
        let data = a.data.as_ref().context("--model needs --data")?;
        let pairs = read_pairs(data, script)?;
        let pairs = if a.part == Part::All {
            pairs
        } else {
            let s = split_dataset(&pairs, a.split_seed)?;
            match a.part {
                Part::Train => s.train,
                Part::Validation => s.validation,
                _ => s.test,
            }
        };
        for path in &a.model {
            let ckpt =
                load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
            names.push(unique_name(&names, ckpt.model.config.architecture.label()));
            reports.push(score(&ckpt.model, &pairs, script)?);
        }
    }
    for path in &a.predictions {
        let stem = path
            .file_stem()
            .map_or("predictions".into(), |s| s.to_string_lossy().into_owned());
        names.push(unique_name(&names, &stem));
        reports.push(EvalReport::from_triples(&read_predictions(path)?, true)?);
    }
    let table: Vec<(&str, &EvalReport)> = names.iter().map(String::as_str).zip(&reports).collect();
    print!("{}", summary_table(&table));
    if let Some(dir) = &a.report_dir {
        for (name, r) in &table {
            write_file(&dir.join(format!("{name}.eval.tsv")), &report_tsv(r)?)?;
        }
        let mut summary = summary_table(&table);
        summary.insert_str(0, "# evaluation summary\n");
        write_file(&dir.join("summary.txt"), &summary)?;
        if a.plot {
            let bars: Vec<(&str, f64)> = table.iter().map(|(n, r)| (*n, r.bleu)).collect();
            write_file(
                &dir.join("bleu.svg"),
                &bar_chart("char-BLEU per model", "BLEU", &bars),
            )?;
        }
    } else if a.plot {
        bail!("--plot needs --report-dir");
    }
    Ok(())
}

fn cmd_pretrain_lm(a: LmArgs) -> Result<()> {
    let corpus =
        fs::read_to_string(&a.corpus).with_context(|| format!("reading {}", a.corpus.display()))?;
    let cfg = CharLMConfig {
        window: a.window,
        hidden: a.hidden,
        dropout: a.dropout,
        direction: if a.bidirectional {
            LmDirection::Bidirectional
        } else {
            LmDirection::Forward
        },
        embed_dim: a.embed_dim,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        patience: a.patience,
        lr: a.lr,
        seed: a.seed,
    };
    let out = train_char_lm(&corpus, &cfg)?;
    save_embedding(&out.embedding, &out.lm.vocab, &a.out)?;
    println!("perplexity\t{:.4}", out.perplexity);
    println!("epochs\t{}", out.epochs);
    println!("embedding\t{}", a.out.display());
    Ok(())
}

fn cmd_pretrain_ftavg(a: FtAvgArgs) -> Result<()> {
    let pairs = read_pairs(&a.data, Script::Raw)?;
    let vocab = cognate_core::train::vocab_for(&pairs);
    let corpus: Vec<String> = match &a.corpus {
        Some(p) => fs::read_to_string(p)?
            .split_whitespace()
            .map(String::from)
            .collect(),
        None => pairs
            .iter()
            .flat_map(|p| [p.source.clone(), p.target.clone()])
            .collect(),
    };
    let store = match (&a.vectors, a.hashed_dim) {
        (Some(p), _) => {
            WordVectorStore::load(p).with_context(|| format!("reading {}", p.display()))?
        }
        (None, Some(dim)) => hashed_subword_vectors(&corpus, dim, a.seed)?,
        (None, None) => bail!("give --vectors or --hashed-dim"),
    };
    let weighting = if a.token_frequency {
        CountWeighting::TokenFrequency
    } else {
        CountWeighting::WordType
    };
    let counts: &[String] = if a.corpus.is_some() || a.token_frequency {
        &corpus
    } else {
        &[]
    };
    let emb = ft_avg_embed(&store, counts, &vocab, weighting)?;
    save_embedding(&emb.table, &vocab, &a.out)?;
    if !emb.missing.is_empty() {
        let missing: String = emb.missing.iter().collect();
        println!("no vectors for\t{missing}");
    }
    println!("embedding\t{}", a.out.display());
    Ok(())
}

fn cmd_tune(a: TuneArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let axes = a
        .axes
        .iter()
        .map(|s| GridAxis::parse(s))
        .collect::<cognate_core::Result<Vec<_>>>()?;
    let data = cfg
        .paths
        .data
        .clone()
        .context("no data file (use --data or paths.data)")?;
    let split = split_dataset(&read_pairs(&data, cfg.script)?, cfg.split_seed)?;
    let pool: Vec<CognatePair> = split
        .train
        .iter()
        .chain(&split.validation)
        .cloned()
        .collect();
    let cells = grid_search(&axes, &cfg, &pool, &split.test)?;
    let table = format_table(&cells);
    print!("{table}");
    if let Some(out) = &a.out {
        write_file(out, &table)?;
    }
    Ok(())
}

fn cmd_oov(a: OovArgs) -> Result<()> {
    let ckpt =
        load_checkpoint(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let transducer = ModelTransducer {
        model: &ckpt.model,
        script: a.script.into(),
    };
    let records = load_pipeline_input(&a.input, &a.attention)?;
    let mono: Vec<String> = fs::read_to_string(&a.monolingual)?
        .split_whitespace()
        .map(String::from)
        .collect();
    if let Some(out) = &a.output {
        let shortlist = build_shortlist(&mono, a.sizes[0])?;
        let corrections = correct_all(&records, &shortlist, &transducer)?;
        let (tsv, _) = format_pipeline_input(&records);
        let mut text = String::new();
        for (line, c) in tsv.lines().zip(&corrections) {
            text.push_str(&format!("{line}\t{}\n", detokenize(&c.tokens)));
        }
        write_file(out, &text)?;
    }
    if records.iter().all(|r| r.reference.is_some()) {
        print!(
            "{}",
            format_pipeline_table(&evaluate_pipeline(&records, &mono, &a.sizes, &transducer)?)
        );
    } else if a.output.is_none() {
        bail!("input has no references to score against; give --output to write corrections");
    }
    Ok(())
}

fn cmd_wx(c: WxCommand) -> Result<()> {
    let (words, encode) = match c {
        WxCommand::Encode { words } => (words, true),
        WxCommand::Decode { words } => (words, false),
    };
    let convert = |line: &str| -> Result<String> {
        let tokens = line
            .split_whitespace()
            .map(|w| if encode { wx_encode(w) } else { wx_decode(w) })
            .collect::<cognate_core::Result<Vec<_>>>()?;
        Ok(tokens.join(" "))
    };
    let mut out = io::stdout().lock();
    if words.is_empty() {
        for line in io::stdin().lock().lines() {
            writeln!(out, "{}", convert(&line?)?)?;
        }
    } else {
        for w in &words {
            writeln!(out, "{}", convert(w)?)?;
        }
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let pairs = generate_pairs(a.seed, a.n, &default_rules())?;
    let mut buf = Vec::new();
    write_cognate_tsv(&mut buf, &pairs)?;
    match &a.out {
        Some(p) => write_file(p, &String::from_utf8(buf)?)?,
        None => io::stdout().lock().write_all(&buf)?,
    }
    if let Some(prefix) = &a.mt_prefix {
        let cfg = SyntheticMtConfig {
            sentences: a.sentences,
            seed: a.seed,
            ..Default::default()
        };
        let mt = synthetic_mt(&pairs, &cfg)?;
        let (tsv, att) = format_pipeline_input(&mt.records);
        let with_ext = |ext: &str| PathBuf::from(format!("{}.{ext}", prefix.display()));
        write_file(&with_ext("tsv"), &tsv)?;
        write_file(&with_ext("att"), &att)?;
        write_file(&with_ext("mono"), &(mt.monolingual.join(" ") + "\n"))?;
    }
    Ok(())
}

fn cmd_error_report(a: ErrorReportArgs) -> Result<()> {
    let report = match (&a.predictions, &a.model, &a.data) {
        (Some(p), _, _) => EvalReport::from_triples(&read_predictions(p)?, true)?,
        (None, Some(m), Some(d)) => {
            let ckpt = load_checkpoint(m)?;
            score(
                &ckpt.model,
                &read_pairs(d, Script::Raw)?,
                Script::Devanagari,
            )?
        }
        _ => bail!("give --predictions, or --model with --data"),
    };
    let wrong = report.items.iter().filter(|r| r.wa < 100.0).count();
    println!("category\tcount");
    for tag in ErrorTag::ALL {
        let n = report
            .items
            .iter()
            .filter(|r| r.tags.contains(&tag))
            .count();
        println!("{}\t{n}", tag.name());
    }
    println!("# {wrong} wrong of {}", report.n_items);
    if let Some(out) = &a.out {
        write_file(out, &report_tsv(&report)?)?;
    }
    Ok(())
}
