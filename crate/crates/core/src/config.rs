//! Run configuration files.
//!
//! Line-oriented `key = value` pairs grouped under `[section]` headers:
//!
//! ```text
//! script = wx
//! split_seed = 7
//!
//! [paths]
//! data = cognates.tsv
//!
//! [model]
//! architecture = am
//! hidden_dim = 48
//!
//! [optimizer]
//! kind = adam
//! lr = 0.005
//! ```
//!
//! `#` starts a comment. Relative paths resolve against the file's
//! directory. Within `[optimizer]`, `kind` is applied before the other keys
//! because it resets them to that optimizer's defaults.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::{Architecture, ModelConfig};
use crate::optim::{DecayMode, OptimizerKind, OptimizerSpec};
use crate::text::Script;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub optimizer: OptimizerSpec,
    pub script: Script,
    pub split_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            optimizer: OptimizerSpec::new(OptimizerKind::Adam),
            script: Script::Raw,
            split_seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::InvalidArgument(format!(
            "bad value `{value}` for `{key}`"
        ))),
    }
}

fn script_name(s: Script) -> &'static str {
    match s {
        Script::Devanagari => "devanagari",
        Script::Wx => "wx",
        Script::Raw => "raw",
    }
}

impl RunConfig {
    /// Sets one dotted key such as `model.hidden_dim` or `train.seed`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        let o = &mut self.optimizer;
        match key {
            "script" => self.script = value.parse()?,
            "split_seed" => self.split_seed = parse(key, value)?,
            "paths.data" => self.paths.data = Some(value.into()),
            "paths.vectors" => self.paths.vectors = Some(value.into()),
            "paths.checkpoints" => self.paths.checkpoints = Some(value.into()),
            "paths.reports" => self.paths.reports = Some(value.into()),
            "model.architecture" => m.architecture = value.parse::<Architecture>()?,
            "model.cell" => m.cell = value.parse()?,
            "model.hidden_dim" => m.hidden_dim = parse(key, value)?,
            "model.encoder_layers" => m.encoder_layers = parse(key, value)?,
            "model.decoder_layers" => m.decoder_layers = parse(key, value)?,
            "model.embed_dim" => m.embed_dim = parse(key, value)?,
            "model.dropout" => m.dropout = parse(key, value)?,
            "model.num_layers" => m.num_layers = parse(key, value)?,
            "model.num_heads" => m.num_heads = parse(key, value)?,
            "model.d_model" => m.d_model = parse(key, value)?,
            "model.ffn_dim" => m.ffn_dim = parse(key, value)?,
            "model.chunk_size" => m.chunk_size = parse(key, value)?,
            "model.max_decode_len" => m.max_decode_len = parse(key, value)?,
            "model.beam_width" => m.beam_width = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.max_epochs" => t.max_epochs = parse(key, value)?,
            "train.patience" => t.patience = parse(key, value)?,
            "train.l2" => t.l2 = parse(key, value)?,
            "train.seed" => t.seed = parse(key, value)?,
            "train.val_fraction" => t.val_fraction = parse(key, value)?,
            "train.shuffle_each_epoch" => t.shuffle_each_epoch = parse_bool(key, value)?,
            "train.keep_last" => t.keep_last = parse(key, value)?,
            "train.warmup_steps" => t.warmup_steps = parse(key, value)?,
            "optimizer.kind" => *o = OptimizerSpec::new(value.parse()?),
            "optimizer.lr" => o.lr = parse(key, value)?,
            "optimizer.decay" => {
                o.decay = match value {
                    "" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "optimizer.decay_mode" => {
                o.decay_mode = match value {
                    "per-epoch" => DecayMode::PerEpoch,
                    "inverse-time" => DecayMode::InverseTime,
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "bad value `{value}` for `{key}`"
                        )))
                    }
                }
            }
            "optimizer.momentum" => o.momentum = parse(key, value)?,
            "optimizer.rho" => o.rho = parse(key, value)?,
            "optimizer.beta1" => o.beta1 = parse(key, value)?,
            "optimizer.beta2" => o.beta2 = parse(key, value)?,
            "optimizer.eps" => o.eps = parse(key, value)?,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown configuration key `{key}`"
                )))
            }
        }
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected `key = value`".into(),
                });
            };
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            entries.push((i + 1, key, v.trim().to_string()));
        }
        entries.sort_by_key(|(_, k, _)| k != "optimizer.kind");
        let mut cfg = RunConfig::default();
        for (line, key, value) in entries {
            cfg.set(&key, &value).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    /// Reads a config file, resolving relative paths against its directory
    /// and checking that the input files exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::parse(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.paths.data,
            &mut cfg.paths.vectors,
            &mut cfg.paths.checkpoints,
            &mut cfg.paths.reports,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.check_paths()?;
        Ok(cfg)
    }

    /// Input files must exist; output directories are created on demand.
    pub fn check_paths(&self) -> Result<()> {
        for (name, p) in [("data", &self.paths.data), ("vectors", &self.paths.vectors)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::InvalidArgument(format!(
                        "{name} path {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.optimizer.validate()
    }

    /// The configuration in the file format accepted by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let (m, t, o) = (&self.model, &self.train, &self.optimizer);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "script = {}\nsplit_seed = {}",
            script_name(self.script),
            self.split_seed
        );
        s.push_str("\n[paths]\n");
        for (k, p) in [
            ("data", &self.paths.data),
            ("vectors", &self.paths.vectors),
            ("checkpoints", &self.paths.checkpoints),
            ("reports", &self.paths.reports),
        ] {
            if let Some(p) = p {
                let _ = writeln!(s, "{k} = {}", p.display());
            }
        }
        let _ = write!(
            s,
            "\n[model]\narchitecture = {}\ncell = {}\nhidden_dim = {}\nencoder_layers = {}\ndecoder_layers = {}\n\
             embed_dim = {}\ndropout = {}\nnum_layers = {}\nnum_heads = {}\nd_model = {}\nffn_dim = {}\n\
             chunk_size = {}\nmax_decode_len = {}\nbeam_width = {}\n",
            m.architecture.name(),
            match m.cell {
                crate::cells::CellKind::Lstm => "lstm",
                crate::cells::CellKind::Gru => "gru",
            },
            m.hidden_dim,
            m.encoder_layers,
            m.decoder_layers,
            m.embed_dim,
            m.dropout,
            m.num_layers,
            m.num_heads,
            m.d_model,
            m.ffn_dim,
            m.chunk_size,
            m.max_decode_len,
            m.beam_width
        );
        let _ = write!(
            s,
            "\n[train]\nbatch_size = {}\nmax_epochs = {}\npatience = {}\nl2 = {}\nseed = {}\nval_fraction = {}\n\
             shuffle_each_epoch = {}\nkeep_last = {}\nwarmup_steps = {}\n",
            t.batch_size,
            t.max_epochs,
            t.patience,
            t.l2,
            t.seed,
            t.val_fraction,
            t.shuffle_each_epoch,
            t.keep_last,
            t.warmup_steps
        );
        let _ = write!(
            s,
            "\n[optimizer]\nkind = {}\nlr = {}\ndecay = {}\ndecay_mode = {}\nmomentum = {}\nrho = {}\nbeta1 = {}\n\
             beta2 = {}\neps = {}\n",
            o.kind.name(),
            o.lr,
            o.decay.map_or("none".to_string(), |d| d.to_string()),
            match o.decay_mode {
                DecayMode::PerEpoch => "per-epoch",
                DecayMode::InverseTime => "inverse-time",
            },
            o.momentum,
            o.rho,
            o.beta1,
            o.beta2,
            o.eps
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let cfg = RunConfig::parse(
            "script = wx # transliterated\n[model]\narchitecture = tn\nd_model = 32\n\n[optimizer]\nlr = 0.01\nkind = sgd\n",
        )
        .unwrap();
        assert_eq!(cfg.script, Script::Wx);
        assert_eq!(cfg.model.architecture, Architecture::Tn);
        assert_eq!(cfg.model.d_model, 32);
        assert_eq!(cfg.optimizer.kind, OptimizerKind::Sgd);
        assert_eq!(cfg.optimizer.lr, 0.01);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert!(matches!(
            RunConfig::parse("[model]\nhidden_dim = x\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            RunConfig::parse("[model]\nbogus = 1\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            RunConfig::parse("no equals sign\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn text_form_parses_back() {
        let mut cfg = RunConfig::default();
        cfg.set("train.l2", "0.0001").unwrap();
        cfg.set("optimizer.decay", "0.5").unwrap();
        cfg.set("paths.data", "x.tsv").unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn missing_input_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "[paths]\ndata = nowhere.tsv\n").unwrap();
        assert!(matches!(
            RunConfig::load(&path),
            Err(Error::InvalidArgument(_))
        ));
        fs::write(dir.path().join("nowhere.tsv"), "a\tb\n").unwrap();
        assert_eq!(
            RunConfig::load(&path).unwrap().paths.data.unwrap(),
            dir.path().join("nowhere.tsv")
        );
    }
}
