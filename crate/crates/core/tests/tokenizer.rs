mod common;

use common::rng;
use masked_motion::error::Error;
use masked_motion::motion::{synth_clip, MotionSequence, Skeleton, FPS};
use masked_motion::tensor::Tape;
use masked_motion::tokenizer::{
    codebook_reset, nearest_code, perplexity, quantize, tokenizer_loss, FeatureStats, TokenGrid, Tokenizer,
    TokenizerConfig, TokenizerTrainConfig, TokenizerTrainer,
};
use proptest::prelude::*;
use rand::Rng;

fn random_rows(n: usize, d: usize, scale: f32, r: &mut impl Rng) -> Vec<f32> {
    (0..n * d).map(|_| r.gen_range(-scale..scale)).collect()
}

/// Independent nearest-neighbour search in f64.
fn brute_nearest(x: &[f64], book: &[f32], d: usize) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (k, c) in book.chunks_exact(d).enumerate() {
        let dist: f64 = x.iter().zip(c).map(|(a, &b)| (a - b as f64).powi(2)).sum();
        if dist < best.0 {
            best = (dist, k);
        }
    }
    best.1
}

fn tiny_config() -> TokenizerConfig {
    TokenizerConfig {
        feature_dim: 41,
        hidden: 16,
        code_dim: 8,
        codebook_size: 16,
        layers: 2,
        beta: 0.25,
    }
}

fn clip(frames: usize, index: usize) -> MotionSequence {
    synth_clip(3, index % 4, index, frames, FPS, &Skeleton::desk()).unwrap().motion
}

#[test]
fn quantize_matches_brute_force_on_every_layer() {
    let mut r = rng(11);
    let (n, d, k) = (1000, 6, 64);
    let z = random_rows(n, d, 2.0, &mut r);
    let b0 = random_rows(k, d, 2.0, &mut r);
    let b1 = random_rows(k, d, 0.5, &mut r);
    let q = quantize(&z, d, &[&b0, &b1]).unwrap();
    assert_eq!(q.indices.len(), 2 * n);
    let mut mismatches = 0;
    for i in 0..n {
        let mut res: Vec<f64> = z[i * d..(i + 1) * d].iter().map(|&v| v as f64).collect();
        for (layer, book) in [&b0, &b1].iter().enumerate() {
            let want = brute_nearest(&res, book, d);
            let got = q.indices[layer * n + i];
            if want != got {
                mismatches += 1;
            }
            for c in 0..d {
                res[c] -= book[got * d + c] as f64;
            }
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn nearest_code_prefers_lowest_index_on_ties() {
    let book = [1.0, 0.0, -1.0, 0.0, 1.0, 0.0];
    assert_eq!(nearest_code(&[0.0, 0.0], &book, 2), 0);
    assert_eq!(nearest_code(&[1.0, 0.0], &book, 2), 0);
    assert_eq!(nearest_code(&[-0.9, 0.1], &book, 2), 1);
}

#[test]
fn exact_code_leaves_no_residual() {
    let book = [0.5, -0.25, 3.0, 1.0, -2.0, 0.0];
    let z = [3.0, 1.0];
    let q = quantize(&z, 2, &[&book]).unwrap();
    assert_eq!(q.indices, vec![1]);
    assert_eq!(q.quantized, z.to_vec());
    assert_eq!(q.residual_norms, vec![0.0]);
}

#[test]
fn empty_codebook_is_rejected() {
    let z = [1.0, 2.0];
    assert!(matches!(quantize(&z, 2, &[&[]]), Err(Error::EmptyCodebook)));
    assert!(matches!(quantize(&z, 2, &[]), Err(Error::EmptyCodebook)));
    let cfg = TokenizerConfig {
        codebook_size: 0,
        ..tiny_config()
    };
    assert!(matches!(Tokenizer::new(cfg, &mut rng(0)), Err(Error::EmptyCodebook)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// With a zero row available in the second codebook, refinement never
    /// increases the residual.
    #[test]
    fn second_layer_never_increases_residual(seed in 0u64..10_000, n in 1usize..40, d in 1usize..8) {
        let mut r = rng(seed);
        let z = random_rows(n, d, 3.0, &mut r);
        let b0 = random_rows(16, d, 3.0, &mut r);
        let mut b1 = random_rows(16, d, 1.0, &mut r);
        b1[..d].fill(0.0);
        let q = quantize(&z, d, &[&b0, &b1]).unwrap();
        prop_assert!(q.residual_norms[1] <= q.residual_norms[0] + 1e-6);
        for i in 0..n {
            let k0 = q.indices[i];
            let one: f32 = (0..d).map(|c| (z[i * d + c] - b0[k0 * d + c]).powi(2)).sum();
            let two: f32 = (0..d).map(|c| (z[i * d + c] - q.quantized[i * d + c]).powi(2)).sum();
            prop_assert!(two <= one + 1e-5);
        }
    }

    #[test]
    fn quantized_is_sum_of_chosen_codes(seed in 0u64..10_000, n in 1usize..20) {
        let mut r = rng(seed);
        let d = 3;
        let z = random_rows(n, d, 2.0, &mut r);
        let b0 = random_rows(8, d, 2.0, &mut r);
        let b1 = random_rows(8, d, 0.5, &mut r);
        let q = quantize(&z, d, &[&b0, &b1]).unwrap();
        for i in 0..n {
            let (a, b) = (q.indices[i], q.indices[n + i]);
            for c in 0..d {
                let want = b0[a * d + c] + b1[b * d + c];
                prop_assert!((q.quantized[i * d + c] - want).abs() < 1e-6);
            }
        }
    }
}

fn loss_value(m: &[f32], m_hat: &[f32], z: &[f32], zb: &[f32], beta: f32) -> f32 {
    let mut tape = Tape::new();
    let mv = tape.constant_from(&[m.len()], m.to_vec()).unwrap();
    let mh = tape.constant_from(&[m_hat.len()], m_hat.to_vec()).unwrap();
    let zv = tape.constant_from(&[z.len()], z.to_vec()).unwrap();
    let zbv = tape.constant_from(&[zb.len()], zb.to_vec()).unwrap();
    let l = tokenizer_loss(&mut tape, mv, mh, zv, zbv, beta).unwrap();
    tape.scalar(l)
}

#[test]
fn loss_is_zero_on_perfect_reconstruction() {
    let m = [0.3, -1.0, 2.0, 0.5];
    let z = [0.1, 0.2];
    assert_eq!(loss_value(&m, &m, &z, &z, 0.25), 0.0);
}

#[test]
fn loss_counts_unit_reconstruction_error() {
    let m = [0.3, -1.0, 2.0, 0.5];
    let m_hat: Vec<f32> = m.iter().map(|v| v + 1.0).collect();
    let z = [0.1, 0.2];
    assert!((loss_value(&m, &m_hat, &z, &z, 0.25) - 1.0).abs() < 1e-6);
}

#[test]
fn commitment_gradients_follow_the_stop_gradient_split() {
    let mut r = rng(5);
    let n = 12;
    let beta = 0.25;
    let m = random_rows(n, 1, 1.0, &mut r);
    let m_hat: Vec<f32> = m.iter().map(|v| v + 0.5).collect();
    let z = random_rows(n, 1, 1.0, &mut r);
    let zb = random_rows(n, 1, 1.0, &mut r);
    let (gz, gzb) = {
        let mut tape = Tape::new();
        let mv = tape.constant_from(&[n], m.clone()).unwrap();
        let mh = tape.constant_from(&[n], m_hat.clone()).unwrap();
        let zv = tape.leaf(masked_motion::tensor::Tensor::new(vec![n], z.clone()).unwrap().with_grad());
        let zbv = tape.leaf(masked_motion::tensor::Tensor::new(vec![n], zb.clone()).unwrap().with_grad());
        let l = tokenizer_loss(&mut tape, mv, mh, zv, zbv, beta).unwrap();
        let mut g = tape.backward(l).unwrap();
        (g.take(zv).unwrap(), g.take(zbv).unwrap())
    };
    // central differences of the commitment term alone for z, and of the
    // codebook term alone for z_bar
    let commit = |z: &[f32]| beta * z.iter().zip(&zb).map(|(a, b)| (a - b).powi(2)).sum::<f32>() / n as f32;
    let codebook = |zb: &[f32]| z.iter().zip(zb).map(|(a, b)| (a - b).powi(2)).sum::<f32>() / n as f32;
    let eps = 1e-3;
    for i in 0..n {
        let (mut p, mut q) = (z.clone(), z.clone());
        p[i] += eps;
        q[i] -= eps;
        let num = (commit(&p) - commit(&q)) / (2.0 * eps);
        assert!((num - gz[i]).abs() < 1e-3, "z[{i}]: {num} vs {}", gz[i]);
        let (mut p, mut q) = (zb.clone(), zb.clone());
        p[i] += eps;
        q[i] -= eps;
        let num = (codebook(&p) - codebook(&q)) / (2.0 * eps);
        assert!((num - gzb[i]).abs() < 1e-3, "z_bar[{i}]: {num} vs {}", gzb[i]);
    }
}

#[test]
fn reset_leaves_a_fully_used_codebook_alone() {
    let mut r = rng(1);
    let mut book = random_rows(8, 4, 1.0, &mut r);
    let before = book.clone();
    let pool = random_rows(20, 4, 1.0, &mut r);
    assert_eq!(codebook_reset(&mut book, &[3; 8], &pool, 4, &mut r), 0);
    assert_eq!(book, before);
}

#[test]
fn reset_revives_exactly_the_dead_rows() {
    let mut r = rng(2);
    let mut book = random_rows(8, 4, 1.0, &mut r);
    let before = book.clone();
    let pool = random_rows(20, 4, 1.0, &mut r);
    let mut usage = [5u64; 8];
    usage[3] = 0;
    assert_eq!(codebook_reset(&mut book, &usage, &pool, 4, &mut r), 1);
    for k in 0..8 {
        let row = &book[k * 4..(k + 1) * 4];
        if k == 3 {
            assert!(pool.chunks_exact(4).any(|p| p == row));
        } else {
            assert_eq!(row, &before[k * 4..(k + 1) * 4]);
        }
    }
}

#[test]
fn perplexity_examples() {
    assert!((perplexity(&[5; 16]) - 16.0).abs() < 1e-9);
    assert!((perplexity(&[0, 9, 0, 0]) - 1.0).abs() < 1e-12);
    assert_eq!(perplexity(&[0, 0]), 0.0);
}

#[test]
fn reset_does_not_lower_perplexity_in_training() {
    let clips: Vec<MotionSequence> = (0..4).map(|i| clip(80, i)).collect();
    let refs: Vec<&MotionSequence> = clips.iter().collect();
    let tc = TokenizerTrainConfig {
        steps: 40,
        batch: 4,
        window: 32,
        lr: 1e-3,
        warmup: 5,
        reset_every: 0,
        seed: 9,
    };
    let mut t = TokenizerTrainer::new(tiny_config(), tc, &refs).unwrap();
    for _ in 0..tc.steps {
        t.step().unwrap();
    }
    let tok = &mut t.model;
    let d = tok.config.code_dim;
    let z: Vec<f32> = clips.iter().flat_map(|c| tok.latents(c).unwrap()).collect();
    let usage_of = |tok: &Tokenizer| {
        let q = tok.quantize_latents(&z).unwrap();
        let n = z.len() / d;
        let mut u = vec![0u64; tok.config.codebook_size];
        for &i in &q.indices[..n] {
            u[i] += 1;
        }
        u
    };
    let before = usage_of(tok);
    let replaced = codebook_reset(tok.codebook_mut(0), &before, &z, d, &mut rng(4));
    let after = usage_of(tok);
    assert!(perplexity(&after) >= perplexity(&before) - 1e-9, "{before:?} -> {after:?} ({replaced} replaced)");
}

#[test]
fn encode_downsamples_and_decode_restores_length() {
    let tok = Tokenizer::new(tiny_config(), &mut rng(0)).unwrap();
    let g = tok.encode(&clip(128, 0)).unwrap();
    assert_eq!((g.layers(), g.len(), g.frames), (2, 32, 128));
    assert_eq!(tok.decode(&g, FPS).unwrap().frames(), 128);
    let g = tok.encode(&clip(130, 1)).unwrap();
    assert_eq!((g.len(), g.frames), (33, 130));
    let a = tok.decode(&g, FPS).unwrap();
    let b = tok.decode(&g, FPS).unwrap();
    assert_eq!(a.frames(), 130);
    assert_eq!(a, b);
}

#[test]
fn encode_rejects_wrong_width() {
    let tok = Tokenizer::new(tiny_config(), &mut rng(0)).unwrap();
    let bad = MotionSequence::new(FPS, 44, vec![0.0; 44 * 8]).unwrap();
    assert!(matches!(tok.encode(&bad), Err(Error::Shape(_))));
}

#[test]
fn feature_stats_round_trip() {
    let clips: Vec<MotionSequence> = (0..3).map(|i| clip(64, i)).collect();
    let refs: Vec<&MotionSequence> = clips.iter().collect();
    let stats = FeatureStats::fit(&refs).unwrap();
    assert!(stats.std.iter().all(|&s| s >= 1e-2));
    let data = clips[0].data();
    let back = stats.denormalize(&stats.normalize(data));
    let err = data.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(err < 1e-5);
    assert!(matches!(FeatureStats::fit(&[]), Err(Error::EmptySequence)));
}

#[test]
fn token_grid_validates_shape() {
    assert!(TokenGrid::new(2, 4, vec![0; 8], 16).is_ok());
    assert!(TokenGrid::new(2, 4, vec![0; 8], 13).is_ok());
    assert!(TokenGrid::new(2, 4, vec![0; 8], 12).is_err());
    assert!(TokenGrid::new(2, 4, vec![0; 8], 17).is_err());
    assert!(TokenGrid::new(2, 4, vec![0; 7], 16).is_err());
    let g = TokenGrid::new(1, 3, vec![0, 5, 2], 12).unwrap();
    assert!(g.check_range(6).is_ok());
    assert!(g.check_range(5).is_err());
    let s = g.slice(1, 2).unwrap();
    assert_eq!((s.layer(0), s.frames), (&[5, 2][..], 8));
    assert!(matches!(g.slice(2, 2), Err(Error::InvalidRange(_))));
    let joined = TokenGrid::concat(&[s.clone(), TokenGrid::new(1, 2, vec![1, 1], 6).unwrap()]).unwrap();
    assert_eq!((joined.len(), joined.frames), (4, 14));
}
