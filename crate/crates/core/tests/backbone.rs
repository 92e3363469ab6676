mod common;

use common::rng;
use masked_motion::backbone::{
    cosine_ratio, remask_count, t2m_loss, t2m_weights, training_mask, MaskedConfig, MaskedTransformer, T2mTrainConfig,
    T2mTrainer, TokenExample,
};
use masked_motion::error::Error;
use masked_motion::motion::{synth_clip, Skeleton, FPS};
use masked_motion::tensor::Tape;
use masked_motion::tokenizer::{Tokenizer, TokenizerConfig};
use proptest::prelude::*;
use rand::Rng;

fn tiny() -> MaskedConfig {
    MaskedConfig {
        codebook_size: 16,
        width: 16,
        layers: 2,
        heads: 2,
        ffn: 32,
        max_len: 24,
        genres: 4,
    }
}

fn model(seed: u64) -> MaskedTransformer {
    MaskedTransformer::new(tiny(), &mut rng(seed)).unwrap()
}

#[test]
fn cosine_ratio_endpoints_and_clamp() {
    assert!((cosine_ratio(0.0) - 1.0).abs() < 1e-12);
    assert!(cosine_ratio(1.0).abs() < 1e-12);
    // u near 1 would mask nothing; the clamp keeps at least 10%
    let ids: Vec<usize> = (0..50).map(|i| i % 16).collect();
    let mut r = rng(3);
    for _ in 0..500 {
        let (_, mask) = training_mask(&ids, 16, &mut r).unwrap();
        assert!(mask.iter().filter(|&&m| m).count() >= 5);
    }
    assert!(matches!(
        training_mask(&[1], 16, &mut r),
        Err(Error::SequenceTooShort { needed: 2, got: 1 })
    ));
}

#[test]
fn cosine_ratio_mean_is_two_over_pi() {
    let mut r = rng(7);
    let n = 200_000;
    let mean = (0..n).map(|_| cosine_ratio(r.gen())).sum::<f64>() / n as f64;
    assert!((mean - std::f64::consts::FRAC_2_PI).abs() < 5e-3, "{mean}");
}

#[test]
fn masked_fraction_matches_clamped_schedule() {
    let steps = 100_000;
    let expected = (0..steps)
        .map(|i| cosine_ratio((i as f64 + 0.5) / steps as f64).clamp(0.1, 1.0))
        .sum::<f64>()
        / steps as f64;
    let ids: Vec<usize> = (0..1000).map(|i| i % 16).collect();
    let mut r = rng(8);
    let draws = 4000;
    let mut total = 0.0;
    for _ in 0..draws {
        let (corrupt, mask) = training_mask(&ids, 16, &mut r).unwrap();
        for ((&c, &m), &t) in corrupt.iter().zip(&mask).zip(&ids) {
            assert_eq!(c, if m { 16 } else { t });
        }
        total += mask.iter().filter(|&&m| m).count() as f64 / 1000.0;
    }
    assert!((total / draws as f64 - expected).abs() < 0.02);
}

#[test]
fn remask_schedule_examples() {
    assert_eq!(remask_count(100, 0, 18), 100);
    assert_eq!(remask_count(100, 18, 18), 0);
    assert_eq!(remask_count(64, 9, 18), 45);
    for len in [1, 7, 32, 64] {
        for s in [1, 5, 18] {
            let counts: Vec<usize> = (0..=s).map(|t| remask_count(len, t, s)).collect();
            assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
        }
    }
}

#[test]
fn uniform_logits_give_log_k() {
    let (n, k) = (10, 16);
    let mut tape = Tape::new();
    let logits = tape.constant_from(&[1, n, k], vec![0.0; n * k]).unwrap();
    let targets: Vec<usize> = (0..n).map(|i| (i * 3) % k).collect();
    let mask: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let l = t2m_loss(&mut tape, logits, &targets, &mask, k + 1, 1.0).unwrap();
    assert!((tape.scalar(l) - (k as f32).ln()).abs() < 1e-5);
}

#[test]
fn zero_unmask_weight_scores_masked_positions_only() {
    let (n, k) = (6, 5);
    let mut r = rng(4);
    let raw: Vec<f32> = (0..n * k).map(|_| r.gen_range(-2.0..2.0)).collect();
    let targets = vec![0, 1, 2, 3, 4, 0];
    let mask = vec![true, false, false, true, false, true];
    let mut tape = Tape::new();
    let logits = tape.constant_from(&[1, n, k], raw.clone()).unwrap();
    let l = t2m_loss(&mut tape, logits, &targets, &mask, k + 1, 0.0).unwrap();
    let ce = |i: usize| {
        let row = &raw[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f32::MIN, f32::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f32>().ln();
        lse - row[targets[i]]
    };
    let want = (ce(0) + ce(3) + ce(5)) / 3.0;
    assert!((tape.scalar(l) - want).abs() < 1e-5);
}

#[test]
fn pad_positions_carry_no_weight() {
    let w = t2m_weights(&[true, false, true, false], &[3, 4, 17, 17], 17, 0.5);
    assert_eq!(w, vec![1.0, 0.5, 0.0, 0.0]);
}

#[test]
fn appended_padding_leaves_real_positions_unchanged() {
    let m = model(1);
    let ids = vec![3, 16, 5, 7, 16, 2];
    let a = m.logits(&ids, Some(1)).unwrap();
    let mut padded = ids.clone();
    padded.extend([17; 5]);
    let b = m.logits(&padded, Some(1)).unwrap();
    let k = 16;
    for (x, y) in a.iter().zip(&b[..ids.len() * k]) {
        assert!((x - y).abs() < 1e-5);
    }
}

#[test]
fn null_genre_changes_the_logits() {
    let m = model(2);
    let ids = vec![1, 16, 16, 4, 9, 16];
    let a = m.logits(&ids, Some(0)).unwrap();
    let b = m.logits(&ids, None).unwrap();
    assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
    assert!(matches!(m.logits(&ids, Some(4)), Err(Error::Parameter(_))));
    assert!(matches!(m.logits(&[18], None), Err(Error::Shape(_))));
    assert!(m.logits(&vec![0; 25], None).is_err());
}

#[test]
fn width_must_split_into_heads() {
    let cfg = MaskedConfig { heads: 3, ..tiny() };
    assert!(matches!(MaskedTransformer::new(cfg, &mut rng(0)), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn logits_are_finite_for_any_vocabulary_input(
        ids in prop::collection::vec(0usize..18, 1..24),
        genre in prop::option::of(0usize..4),
    ) {
        let m = model(5);
        let y = m.logits(&ids, genre).unwrap();
        prop_assert_eq!(y.len(), ids.len() * 16);
        prop_assert!(y.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn training_lowers_the_loss_on_a_small_set() {
    let skel = Skeleton::desk();
    let tcfg = TokenizerConfig {
        hidden: 16,
        code_dim: 8,
        codebook_size: 16,
        ..TokenizerConfig::default()
    };
    let tok = Tokenizer::new(tcfg, &mut rng(0)).unwrap();
    let data: Vec<TokenExample> = (0..4)
        .map(|i| {
            let c = synth_clip(1, i % 2, i, 64, FPS, &skel).unwrap();
            TokenExample::build(&tok, &c, 0).unwrap()
        })
        .collect();
    let cfg = T2mTrainConfig {
        steps: 80,
        batch: 4,
        lr: 3e-3,
        warmup: 5,
        cond_drop: 0.1,
        lambda_unmask: 1.0,
        seed: 1,
    };
    let mut t = T2mTrainer::new(model(3), cfg, data).unwrap();
    let losses: Vec<f32> = (0..cfg.steps).map(|_| t.step().unwrap()).collect();
    let head: f32 = losses[..10].iter().sum::<f32>() / 10.0;
    let tail: f32 = losses[losses.len() - 10..].iter().sum::<f32>() / 10.0;
    assert!(tail < head * 0.8, "{head} -> {tail}");
}
