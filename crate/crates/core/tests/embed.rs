use cognate_core::embed::{train_char_lm, CharLMConfig, LmDirection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(direction: LmDirection) -> CharLMConfig {
    CharLMConfig {
        window: 4,
        hidden: 16,
        embed_dim: 8,
        dropout: 0.0,
        max_epochs: 5,
        lr: 1e-2,
        direction,
        ..Default::default()
    }
}

#[test]
fn periodic_corpus_is_almost_certain() {
    let corpus = "abc".repeat(3334);
    for direction in [LmDirection::Forward, LmDirection::Bidirectional] {
        let out = train_char_lm(&corpus, &small(direction)).unwrap();
        assert!(
            (out.perplexity - 1.0).abs() < 0.05,
            "{direction:?}: {}",
            out.perplexity
        );
        assert_eq!(out.embedding.dim(), 8);
    }
}

#[test]
fn uniform_corpus_stays_near_alphabet_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let corpus: String = (0..10_000)
        .map(|_| ['a', 'b', 'c', 'd'][rng.gen_range(0..4)])
        .collect();
    let out = train_char_lm(&corpus, &small(LmDirection::Forward)).unwrap();
    assert!((out.perplexity - 4.0).abs() < 0.2, "{}", out.perplexity);
}
