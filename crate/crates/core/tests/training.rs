use cognate_core::data::{split_dataset, CognatePair};
use cognate_core::error::Error;
use cognate_core::models::{Architecture, ModelConfig};
use cognate_core::optim::{DecayMode, OptimizerSpec};
use cognate_core::synth::{default_rules, generate_pairs};
use cognate_core::train::{evaluate, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn am(hidden: usize) -> ModelConfig {
    ModelConfig {
        hidden_dim: hidden,
        embed_dim: hidden,
        dropout: 0.0,
        ..ModelConfig::for_architecture(Architecture::Am)
    }
}

fn copy_pairs(n: usize, seed: u64) -> Vec<CognatePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(3..=6);
            let w: String = (0..len)
                .map(|_| rng.gen_range(b'a'..=b'h') as char)
                .collect();
            CognatePair::new(w.clone(), w)
        })
        .collect()
}

#[test]
fn attention_model_learns_to_copy() {
    let split = split_dataset(&copy_pairs(500, 1), 1).unwrap();
    let tc = TrainConfig {
        batch_size: 16,
        max_epochs: 50,
        patience: 5,
        seed: 3,
        ..Default::default()
    };
    let out = train(&am(32), &tc, &OptimizerSpec::adam(1e-2), &split).unwrap();
    let report = evaluate(&out.best.model, &split.validation, 64, false).unwrap();
    assert!(
        report.wa >= 95.0,
        "WA {} after {} epochs",
        report.wa,
        out.history.len()
    );
}

#[test]
fn zero_patience_stops_at_first_non_improving_epoch() {
    let split = split_dataset(&generate_pairs(2, 200, &default_rules()).unwrap(), 2).unwrap();
    let tc = TrainConfig {
        batch_size: 8,
        max_epochs: 40,
        patience: 0,
        seed: 2,
        ..Default::default()
    };
    let out = train(&am(8), &tc, &OptimizerSpec::adam(5e-2), &split).unwrap();
    let losses: Vec<f64> = out.history.iter().map(|r| r.val_loss).collect();
    let (last, before) = losses.split_last().unwrap();
    assert!(before.windows(2).all(|w| w[1] < w[0]));
    if out.stopped_early {
        assert!(*last >= *before.last().unwrap());
        assert_eq!(out.best.epoch, losses.len() - 1);
    } else {
        assert_eq!(losses.len(), 40);
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let split = split_dataset(&generate_pairs(4, 120, &default_rules()).unwrap(), 4).unwrap();
    let mut cfg = am(8);
    cfg.dropout = 0.2;
    let tc = TrainConfig {
        batch_size: 8,
        max_epochs: 4,
        seed: 9,
        ..Default::default()
    };
    let a = train(&cfg, &tc, &OptimizerSpec::adam(1e-2), &split).unwrap();
    let b = train(&cfg, &tc, &OptimizerSpec::adam(1e-2), &split).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.best.model.params.flat(), b.best.model.params.flat());
    let c = train(
        &cfg,
        &TrainConfig { seed: 10, ..tc },
        &OptimizerSpec::adam(1e-2),
        &split,
    )
    .unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn runaway_learning_rate_reports_divergence() {
    let split = split_dataset(&generate_pairs(5, 60, &default_rules()).unwrap(), 5).unwrap();
    let tc = TrainConfig {
        batch_size: 8,
        max_epochs: 5,
        seed: 1,
        ..Default::default()
    };
    let opt = OptimizerSpec::adam(1e300).with_decay(0.5, DecayMode::PerEpoch);
    let err = train(&am(4), &tc, &opt, &split).unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 1, .. }), "{err}");
}

#[test]
fn averaged_model_uses_the_last_snapshots() {
    let split = split_dataset(&generate_pairs(6, 60, &default_rules()).unwrap(), 6).unwrap();
    let tc = TrainConfig {
        batch_size: 8,
        max_epochs: 5,
        patience: 10,
        keep_last: 3,
        seed: 1,
        ..Default::default()
    };
    let out = train(&am(4), &tc, &OptimizerSpec::adam(1e-2), &split).unwrap();
    assert_eq!(out.recent.len(), 3);
    let avg = out.averaged(3).unwrap();
    for (name, t) in avg.params.iter() {
        for (i, &x) in t.data().iter().enumerate() {
            let mean = out
                .recent
                .iter()
                .map(|p| p.get(name).unwrap().data()[i])
                .sum::<f64>()
                / 3.0;
            assert!((x - mean).abs() < 1e-12);
        }
    }
    assert!(out.averaged(4).is_err());
}
