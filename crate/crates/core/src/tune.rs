//! Hyperparameter grids: one seeded training run per combination.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{resplit_validation, CognatePair, DatasetSplit};
use crate::error::{Error, Result};
use crate::models::Architecture;
use crate::train::{evaluate, train};

/// Keys that only make sense for recurrent architectures.
const RECURRENT_KEYS: &[&str] = &[
    "model.cell",
    "model.hidden_dim",
    "model.encoder_layers",
    "model.decoder_layers",
    "model.embed_dim",
    "model.chunk_size",
];
const TRANSFORMER_KEYS: &[&str] = &[
    "model.num_layers",
    "model.num_heads",
    "model.d_model",
    "model.ffn_dim",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<String>,
}

impl GridAxis {
    pub fn new<S: ToString>(key: &str, values: &[S]) -> Self {
        GridAxis {
            key: key.to_string(),
            values: values.iter().map(ToString::to_string).collect(),
        }
    }

    /// Parses `key=v1,v2,...`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (key, values) = spec.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!("grid axis `{spec}` is not `key=v1,v2,...`"))
        })?;
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        Ok(GridAxis {
            key: key.trim().to_string(),
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CellOutcome {
    Done {
        bleu: f64,
        ss: f64,
        wa: f64,
        epoch: usize,
    },
    Skipped(String),
    /// Training diverged.
    Broken(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub index: usize,
    pub seed: u64,
    pub assignments: Vec<(String, String)>,
    pub outcome: CellOutcome,
}

/// Seed of grid cell `index` under `base`.
pub fn cell_seed(base: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index as u64 + 1);
    rng.next_u64()
}

/// Every combination of axis values, first axis varying slowest.
pub fn combinations(axes: &[GridAxis]) -> Vec<Vec<(String, String)>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push((axis.key.clone(), v.clone()));
                    p
                })
            })
            .collect()
    })
}

fn skip_reason(cfg: &RunConfig, assignments: &[(String, String)]) -> Option<String> {
    let arch = cfg.model.architecture;
    for (key, _) in assignments {
        if arch == Architecture::Tn && RECURRENT_KEYS.contains(&key.as_str()) {
            return Some(format!("{key} does not apply to the transformer"));
        }
        if arch != Architecture::Tn && TRANSFORMER_KEYS.contains(&key.as_str()) {
            return Some(format!("{key} applies only to the transformer"));
        }
        if arch != Architecture::Han && key == "model.chunk_size" {
            return Some("chunk_size applies only to HAN".into());
        }
    }
    cfg.validate().err().map(|e| e.to_string())
}

/// Runs one training per combination of `axes` on top of `base`. Each run
/// draws its own validation split from `pool` and is scored on `test`
/// (or on its validation split when `test` is empty).
pub fn grid_search(
    axes: &[GridAxis],
    base: &RunConfig,
    pool: &[CognatePair],
    test: &[CognatePair],
) -> Result<Vec<GridCell>> {
    if axes.is_empty() || axes.iter().any(|a| a.values.is_empty()) {
        return Err(Error::EmptyInput("grid has an empty axis".into()));
    }
    let combos = combinations(axes);
    combos
        .into_par_iter()
        .enumerate()
        .map(|(index, assignments)| run_cell(index, assignments, base, pool, test))
        .collect()
}

fn run_cell(
    index: usize,
    assignments: Vec<(String, String)>,
    base: &RunConfig,
    pool: &[CognatePair],
    test: &[CognatePair],
) -> Result<GridCell> {
    let seed = cell_seed(base.train.seed, index);
    let mut cfg = base.clone();
    let mut outcome = None;
    for (k, v) in &assignments {
        if let Err(e) = cfg.set(k, v) {
            outcome = Some(CellOutcome::Skipped(e.to_string()));
        }
    }
    cfg.train.seed = seed;
    let outcome = match outcome
        .or_else(|| skip_reason(&cfg, &assignments).map(CellOutcome::Skipped))
    {
        Some(skipped) => skipped,
        None => {
            let (train_part, validation) = resplit_validation(pool, cfg.train.val_fraction, seed)?;
            let split = DatasetSplit {
                train: train_part,
                validation,
                test: test.to_vec(),
                seed,
            };
            match train(&cfg.model, &cfg.train, &cfg.optimizer, &split) {
                Ok(out) => {
                    let scored = if split.test.is_empty() {
                        &split.validation
                    } else {
                        &split.test
                    };
                    let report = evaluate(&out.best.model, scored, 64, false)?;
                    CellOutcome::Done {
                        bleu: report.bleu,
                        ss: report.ss,
                        wa: report.wa,
                        epoch: out.best.epoch,
                    }
                }
                Err(Error::Diverged { epoch, reason }) => {
                    CellOutcome::Broken(format!("diverged at epoch {epoch}: {reason}"))
                }
                Err(e) => return Err(e),
            }
        }
    };
    Ok(GridCell {
        index,
        seed,
        assignments,
        outcome,
    })
}

/// Tab-separated table: one column per axis, then BLEU, SS and the epoch of
/// least validation loss (`ep`).
pub fn format_table(cells: &[GridCell]) -> String {
    let mut out = String::new();
    if let Some(first) = cells.first() {
        for (k, _) in &first.assignments {
            out.push_str(
                k.strip_prefix("model.")
                    .or(k.strip_prefix("train."))
                    .unwrap_or(k),
            );
            out.push('\t');
        }
        out.push_str("BLEU\tSS\tep\n");
    }
    for c in cells {
        for (_, v) in &c.assignments {
            out.push_str(v);
            out.push('\t');
        }
        match &c.outcome {
            CellOutcome::Done {
                bleu, ss, epoch, ..
            } => out.push_str(&format!("{bleu:.2}\t{ss:.2}\t{epoch}\n")),
            CellOutcome::Skipped(why) => out.push_str(&format!("-\t-\t-\t# skipped: {why}\n")),
            CellOutcome::Broken(why) => out.push_str(&format!("model broken\t-\t-\t# {why}\n")),
        }
    }
    out
}
