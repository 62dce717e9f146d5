//! Mini-batch training with early stopping, and checkpoint averaging.

use std::collections::VecDeque;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::cells::EmbeddingTable;
use crate::data::{CognatePair, DatasetSplit};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::models::{Batch, Model, ModelConfig, Pass};
use crate::optim::{Optimizer, OptimizerSpec};
use crate::params::ParamSet;
use crate::text::CharVocab;
use crate::Real;

/// Extra output positions allowed beyond the longest training target.
pub const DECODE_MARGIN: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-loss improvement before stopping.
    pub patience: usize,
    pub l2: f64,
    pub seed: u64,
    /// Share of train + validation held out for validation when a run
    /// draws its own split (tuning).
    pub val_fraction: f64,
    pub shuffle_each_epoch: bool,
    /// Number of most recent epoch snapshots kept for averaging.
    pub keep_last: usize,
    /// Linear learning-rate ramp over this many updates; 0 disables it.
    pub warmup_steps: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            max_epochs: 100,
            patience: 7,
            l2: 0.0,
            seed: 0,
            val_fraction: 0.1,
            shuffle_each_epoch: true,
            keep_last: 6,
            warmup_steps: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch_size must be at least 1".into(),
            ));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument(
                "max_epochs must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidArgument(format!(
                "val_fraction {} outside [0, 1)",
                self.val_fraction
            )));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "l2 {} must be a finite non-negative number",
                self.l2
            )));
        }
        Ok(())
    }
}

/// BLEU, string similarity and word accuracy, all on a 0..100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSnapshot {
    pub bleu: f64,
    pub ss: f64,
    pub wa: f64,
}

impl From<&EvalReport> for MetricSnapshot {
    fn from(r: &EvalReport) -> Self {
        MetricSnapshot {
            bleu: r.bleu,
            ss: r.ss,
            wa: r.wa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// A model snapshot with the numbers it was selected by.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub metrics: Option<MetricSnapshot>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Lowest validation loss seen.
    pub best: Checkpoint,
    /// Parameters after each of the last `keep_last` epochs, oldest first.
    pub recent: Vec<ParamSet<Real>>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    /// The best model with its parameters replaced by the mean of the last
    /// `k` epoch snapshots.
    pub fn averaged(&self, k: usize) -> Result<Model> {
        let mut model = self.best.model.clone();
        model.params = average_checkpoints(&self.recent, k)?;
        Ok(model)
    }
}

/// Element-wise mean of the last `k` parameter sets.
pub fn average_checkpoints(history: &[ParamSet<Real>], k: usize) -> Result<ParamSet<Real>> {
    if k == 0 || k > history.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot average the last {k} of {} checkpoints",
            history.len()
        )));
    }
    let window = &history[history.len() - k..];
    let mut out = window[0].clone();
    if window.iter().any(|p| !p.same_layout(&out)) {
        return Err(Error::InvalidShape(
            "checkpoints have different parameter layouts".into(),
        ));
    }
    let scale = 1.0 / k as Real;
    for (name, t) in out.iter_mut() {
        let sums = t.data_mut();
        sums.iter_mut().for_each(|x| *x = 0.0);
        for p in window {
            let data = p.get(name)?.data();
            sums.iter_mut().zip(data).for_each(|(s, &x)| *s += x);
        }
        sums.iter_mut().for_each(|x| *x *= scale);
    }
    Ok(out)
}

/// Vocabulary over every character of the given pairs.
pub fn vocab_for(pairs: &[CognatePair]) -> CharVocab {
    let raw: Vec<(&str, &str)> = pairs
        .iter()
        .map(|p| (p.source.as_str(), p.target.as_str()))
        .collect();
    CharVocab::build(&raw)
}

fn longest_target(pairs: &[CognatePair]) -> usize {
    pairs
        .iter()
        .map(|p| p.target.chars().count())
        .max()
        .unwrap_or(0)
}

fn encode_pairs(vocab: &CharVocab, pairs: &[CognatePair]) -> Vec<(Vec<usize>, Vec<usize>)> {
    pairs
        .iter()
        .map(|p| (vocab.encode(&p.source), vocab.encode(&p.target)))
        .collect()
}

/// Mean per-word loss over `pairs`, in eval mode.
pub fn dataset_loss(model: &Model, pairs: &[CognatePair], batch_size: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no pairs to score".into()));
    }
    let encoded = encode_pairs(&model.vocab, pairs);
    let mut total = 0.0;
    for chunk in encoded.chunks(batch_size.max(1)) {
        total += model.eval_loss(&Batch::new(chunk)?)? * chunk.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// Greedy predictions for `pairs` scored against their targets.
pub fn evaluate(
    model: &Model,
    pairs: &[CognatePair],
    batch_size: usize,
    tag_errors: bool,
) -> Result<EvalReport> {
    let sources: Vec<&str> = pairs.iter().map(|p| p.source.as_str()).collect();
    let outputs = model.transduce_batch(&sources, batch_size)?;
    let triples: Vec<(&str, &str, &str)> = pairs
        .iter()
        .zip(&outputs)
        .map(|(p, o)| (p.source.as_str(), p.target.as_str(), o.output.as_str()))
        .collect();
    EvalReport::from_triples(&triples, tag_errors)
}

/// Builds the vocabulary from train + validation, sizes the decoder cap
/// and trains a fresh model.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    opt: &OptimizerSpec,
    data: &DatasetSplit,
) -> Result<TrainOutcome> {
    let model = init_model(model_cfg, train_cfg, data, None)?;
    train_model(model, train_cfg, opt, &data.train, &data.validation)
}

/// A fresh model for `data`, optionally starting from a pre-trained
/// character embedding (rows indexed by the returned model's vocabulary).
pub fn init_model(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &DatasetSplit,
    embedding: Option<&dyn Fn(&CharVocab) -> Result<EmbeddingTable>>,
) -> Result<Model> {
    if data.train.is_empty() {
        return Err(Error::EmptyInput("training split is empty".into()));
    }
    let mut cfg = model_cfg.clone();
    let needed = longest_target(&data.train).max(longest_target(&data.validation)) + DECODE_MARGIN;
    if cfg.max_decode_len < needed {
        info!(
            "raising max_decode_len from {} to {needed}",
            cfg.max_decode_len
        );
        cfg.max_decode_len = needed;
    }
    let pool: Vec<CognatePair> = data.train.iter().chain(&data.validation).cloned().collect();
    let vocab = vocab_for(&pool);
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut model = Model::new(cfg, vocab, &mut rng)?;
    if let Some(build) = embedding {
        build(&model.vocab)?.install(&mut model.params, Model::EMBEDDING)?;
    }
    Ok(model)
}

/// Trains `model` in place of its current parameters.
pub fn train_model(
    mut model: Model,
    cfg: &TrainConfig,
    opt_spec: &OptimizerSpec,
    train: &[CognatePair],
    validation: &[CognatePair],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training split is empty".into()));
    }
    let mut opt = Optimizer::<Real>::new(opt_spec.clone())?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);

    let mut train_ids = encode_pairs(&model.vocab, train);
    let mut val_pairs = validation.to_vec();
    let dropout = model.config.dropout;

    let mut history = Vec::new();
    let mut recent: VecDeque<ParamSet<Real>> = VecDeque::new();
    let mut best: Option<Checkpoint> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        if cfg.shuffle_each_epoch {
            train_ids.shuffle(&mut shuffle_rng);
            val_pairs.shuffle(&mut shuffle_rng);
        }
        let lr = opt.current_lr();
        let mut total = 0.0;
        for chunk in train_ids.chunks(cfg.batch_size) {
            let batch = Batch::new(chunk)?;
            if cfg.warmup_steps > 0 {
                opt.set_lr_scale(((opt.updates() + 1) as f64 / cfg.warmup_steps as f64).min(1.0));
            }
            opt.begin_step(&mut model.params);
            let mut g = Graph::new();
            let bindings = model.params.bind(&mut g, true);
            let loss = model.loss(
                &mut g,
                &bindings,
                &batch,
                &mut Pass::train(dropout, &mut dropout_rng),
            )?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("training loss became {value}"),
                });
            }
            total += value * chunk.len() as f64;
            g.backward(loss)?;
            model.params.zero_grads();
            model.params.absorb_grads(&g, &bindings)?;
            opt.step(&mut model.params, cfg.l2)?;
            if !model.params.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: "parameters became non-finite".into(),
                });
            }
        }
        opt.end_epoch();
        let train_loss = total / train.len() as f64;
        let val_loss = if val_pairs.is_empty() {
            train_loss
        } else {
            dataset_loss(&model, &val_pairs, cfg.batch_size.max(32))?
        };
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("validation loss became {val_loss}"),
            });
        }
        debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:.3e}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });

        if cfg.keep_last > 0 {
            if recent.len() == cfg.keep_last {
                recent.pop_front();
            }
            recent.push_back(model.params.clone());
        }
        if best.as_ref().is_none_or(|b| val_loss < b.val_loss) {
            best = Some(Checkpoint {
                model: model.clone(),
                epoch,
                train_loss,
                val_loss,
                metrics: None,
            });
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let mut best = best.expect("at least one epoch ran");
    if !validation.is_empty() {
        best.metrics = Some(MetricSnapshot::from(&evaluate(
            &best.model,
            validation,
            64,
            false,
        )?));
    }
    info!(
        "trained {} epochs, best epoch {} (validation loss {:.5})",
        history.len(),
        best.epoch,
        best.val_loss
    );
    Ok(TrainOutcome {
        history,
        best,
        recent: recent.into(),
        stopped_early,
    })
}
