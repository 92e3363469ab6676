mod common;

use common::rng;
use masked_motion::adapters::{pose_discrepancy, AdapterKind, AdapterTower, ResidualHead};
use masked_motion::backbone::{remask_count, MaskedConfig, MaskedTransformer};
use masked_motion::error::Error;
use masked_motion::motion::{synth_clip, BeatTrack, MotionSequence, PoseConstraint, Skeleton, FPS};
use masked_motion::sampler::{
    cfg_fuse, decode_tokens, edit_spatial, edit_temporal, generate_long, itto, junction_frames, parallel_decode,
    refine_latents, sample_categorical, CfgMode, GuidanceBundle, GuidanceWeights, IttoConfig, IttoRule, Models,
};
use masked_motion::tensor::Tape;
use masked_motion::tokenizer::{Tokenizer, TokenizerConfig};
use proptest::prelude::*;
use rand::Rng;

fn models() -> Models {
    let skeleton = Skeleton::desk();
    let tokenizer = Tokenizer::new(
        TokenizerConfig {
            hidden: 16,
            code_dim: 8,
            codebook_size: 16,
            ..TokenizerConfig::default()
        },
        &mut rng(0),
    )
    .unwrap();
    let mc = MaskedConfig {
        codebook_size: 16,
        width: 16,
        layers: 2,
        heads: 2,
        ffn: 32,
        max_len: 64,
        genres: 4,
    };
    let backbone = MaskedTransformer::new(mc, &mut rng(1)).unwrap();
    let j = skeleton.joints();
    Models {
        music: Some(AdapterTower::new(AdapterKind::Music, &backbone, j, &mut rng(2))),
        pose: Some(AdapterTower::new(AdapterKind::Pose, &backbone, j, &mut rng(3))),
        residual: Some(ResidualHead::new(mc, &mut rng(4)).unwrap()),
        skeleton,
        tokenizer,
        backbone,
    }
}

fn genre(g: usize) -> GuidanceBundle {
    GuidanceBundle {
        genre: Some(g),
        ..GuidanceBundle::default()
    }
}

fn clip(frames: usize, index: usize) -> MotionSequence {
    synth_clip(5, index % 4, index, frames, FPS, &Skeleton::desk()).unwrap().motion
}

#[test]
fn cfg_text_scale_example() {
    let w = GuidanceWeights {
        text: 4.0,
        ..GuidanceWeights::default()
    };
    let out = cfg_fuse(&[0.0, 0.0], Some(&[1.0, -1.0]), None, None, &w, CfgMode::Delta).unwrap();
    assert_eq!(out, vec![4.0, -4.0]);
    let bad = cfg_fuse(&[0.0, 0.0], Some(&[1.0]), None, None, &w, CfgMode::Delta);
    assert!(matches!(bad, Err(Error::Shape(_))));
}

fn logits(n: usize, r: &mut impl Rng) -> Vec<f32> {
    (0..n).map(|_| r.gen_range(-8.0..8.0)).collect()
}

proptest! {
    #[test]
    fn cfg_degenerate_weights_are_exact(seed in 0u64..100_000, n in 1usize..64) {
        let mut r = rng(seed);
        let (u, t, m, p) = (logits(n, &mut r), logits(n, &mut r), logits(n, &mut r), logits(n, &mut r));
        let zero = GuidanceWeights { uncond: 0.0, text: 0.0, music: 0.0, pose: 0.0 };
        let out = cfg_fuse(&u, Some(&t), Some(&m), Some(&p), &zero, CfgMode::Delta).unwrap();
        prop_assert_eq!(&out, &u);
        let text_only = GuidanceWeights { text: 1.0, ..zero };
        let out = cfg_fuse(&u, Some(&t), Some(&m), Some(&p), &text_only, CfgMode::Delta).unwrap();
        prop_assert_eq!(&out, &t);
        let absent = cfg_fuse(&u, None, None, None, &GuidanceWeights::default(), CfgMode::Delta).unwrap();
        prop_assert_eq!(&absent, &u);
    }

    #[test]
    fn cfg_modes_match_their_formulas(seed in 0u64..100_000) {
        let mut r = rng(seed);
        let n = 8;
        let (u, t, m) = (logits(n, &mut r), logits(n, &mut r), logits(n, &mut r));
        let w = GuidanceWeights { uncond: 0.3, text: 2.5, music: 1.5, pose: 9.0 };
        let delta = cfg_fuse(&u, Some(&t), Some(&m), None, &w, CfgMode::Delta).unwrap();
        let linear = cfg_fuse(&u, Some(&t), Some(&m), None, &w, CfgMode::Linear).unwrap();
        for i in 0..n {
            let d = u[i] + 2.5 * (t[i] - u[i]) + 1.5 * (m[i] - u[i]);
            let l = 0.7 * u[i] + 2.5 * t[i] + 1.5 * m[i];
            prop_assert!((delta[i] - d).abs() < 1e-4);
            prop_assert!((linear[i] - l).abs() < 1e-4);
        }
    }
}

#[test]
fn categorical_sampling_contract() {
    let mut r = rng(1);
    assert!(matches!(sample_categorical(&[0.0, 1.0], 0.0, &mut r), Err(Error::Parameter(_))));
    assert!(matches!(sample_categorical(&[f32::NAN, 1.0], 1.0, &mut r), Err(Error::Numeric(_))));
    for _ in 0..50 {
        assert_eq!(sample_categorical(&[0.0, 3.0, 2.9], 1e-8, &mut r).unwrap(), (1, 1.0));
    }
    let mut counts = [0usize; 2];
    let draws = 20_000;
    for _ in 0..draws {
        counts[sample_categorical(&[0.0, 2f32.ln()], 1.0, &mut r).unwrap().0] += 1;
    }
    let p = counts[1] as f64 / draws as f64;
    assert!((p - 2.0 / 3.0).abs() < 0.02, "{p}");
}

#[test]
fn one_step_commits_every_token() {
    let m = models();
    let (grid, trace) = parallel_decode(&m, &genre(1), 40, 1, 1.0, &mut rng(2)).unwrap();
    assert_eq!((grid.len(), grid.frames, grid.layers()), (10, 40, 2));
    assert_eq!(trace.steps.len(), 1);
    assert_eq!(trace.steps[0].committed, (0..10).collect::<Vec<_>>());
    grid.check_range(16).unwrap();
}

#[test]
fn masked_count_follows_the_schedule() {
    let m = models();
    let (_, trace) = parallel_decode(&m, &genre(0), 256, 18, 1.0, &mut rng(3)).unwrap();
    let want: Vec<usize> = (1..=18).map(|t| remask_count(64, t, 18)).collect();
    assert_eq!(trace.masked_counts(64), want);
    let mut seen = vec![0usize; 64];
    for s in &trace.steps {
        for &p in &s.committed {
            seen[p] += 1;
        }
        assert!(s.confidence.iter().all(|c| (0.0..=1.0).contains(c)));
    }
    assert!(seen.iter().all(|&c| c == 1));
}

#[test]
fn decoding_is_deterministic_per_seed() {
    let m = models();
    let mut b = genre(2);
    b.music = Some(BeatTrack::regular(110.0, 0.1, 96, FPS, 1.0, &mut rng(9)).unwrap());
    let (g1, t1) = parallel_decode(&m, &b, 96, 6, 1.0, &mut rng(4)).unwrap();
    let (g2, t2) = parallel_decode(&m, &b, 96, 6, 1.0, &mut rng(4)).unwrap();
    assert_eq!(g1, g2);
    assert_eq!(t1.to_csv(), t2.to_csv());
    let (g3, _) = parallel_decode(&m, &b, 96, 6, 1.0, &mut rng(5)).unwrap();
    assert_ne!(g1, g3);
    let csv = t1.to_csv();
    assert!(csv.starts_with("step,position,confidence,committed\n"));
    assert_eq!(csv.lines().count(), 1 + t1.steps.len() * 24);
}

#[test]
fn bundle_needs_a_condition_and_matching_models() {
    let mut m = models();
    let none = GuidanceBundle::default();
    assert!(matches!(parallel_decode(&m, &none, 16, 2, 1.0, &mut rng(0)), Err(Error::Usage(_))));
    let free = GuidanceBundle {
        unconditional: true,
        ..GuidanceBundle::default()
    };
    assert!(parallel_decode(&m, &free, 16, 2, 1.0, &mut rng(0)).is_ok());
    m.music = None;
    let b = GuidanceBundle {
        music: Some(BeatTrack::regular(100.0, 0.0, 16, FPS, 1.0, &mut rng(1)).unwrap()),
        ..GuidanceBundle::default()
    };
    assert!(matches!(parallel_decode(&m, &b, 16, 2, 1.0, &mut rng(0)), Err(Error::Prerequisite(_))));
    assert!(matches!(
        decode_tokens(&m, &free, vec![16; 4], 0, 1.0, &mut rng(0)),
        Err(Error::Parameter(_))
    ));
}

#[test]
fn refinement_on_identity_decoder_decays_geometrically() {
    let (frames, joints) = (4, 3);
    let mut r = rng(7);
    let target: Vec<f32> = (0..frames * joints * 3).map(|_| r.gen_range(-1.0..1.0)).collect();
    let valid: Vec<bool> = (0..frames * joints).map(|i| i % 2 == 0).collect();
    let count = valid.iter().filter(|&&v| v).count() as f64;
    let z0: Vec<f32> = (0..target.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
    let cfg = IttoConfig {
        lr: 0.06,
        iters: 40,
        rule: IttoRule::Gradient,
        quantized: false,
    };
    let (_, history) = refine_latents(z0, cfg, |z, grad| {
        let mut tape = Tape::new();
        let t = masked_motion::tensor::Tensor::new(vec![frames, joints, 3], z.to_vec())?;
        let zv = if grad { tape.leaf(t.with_grad()) } else { tape.constant(t) };
        let d = pose_discrepancy(&mut tape, zv, &target, &valid)?;
        let dv = tape.scalar(d);
        if !grad {
            return Ok((dv, Vec::new()));
        }
        let mut g = tape.backward(d)?;
        Ok((dv, g.take(zv).unwrap()))
    })
    .unwrap();
    let rate = (1.0 - 2.0 * 0.06 / count).powi(2);
    assert_eq!(history.len(), 41);
    for w in history.windows(2) {
        let got = w[1] as f64 / w[0] as f64;
        assert!((got - rate).abs() < 1e-4, "{got} vs {rate}");
    }
}

#[test]
fn refinement_stops_on_a_zero_gradient() {
    let z = vec![0.5, -0.25];
    let (out, history) = refine_latents(z.clone(), IttoConfig::default(), |_, _| Ok((0.0, Vec::new()))).unwrap();
    assert_eq!(out, z);
    assert_eq!(history, vec![0.0]);
    let bad = IttoConfig {
        lr: 0.0,
        ..IttoConfig::default()
    };
    assert!(matches!(refine_latents(z, bad, |_, _| Ok((1.0, vec![0.0; 2]))), Err(Error::Parameter(_))));
}

#[test]
fn itto_is_monotone_and_leaves_models_untouched() {
    let m = models();
    let skel = &m.skeleton;
    let sums = |m: &Models| {
        (
            m.tokenizer.params.checksum(),
            m.backbone.params.checksum(),
            m.pose.as_ref().unwrap().tower.params.checksum(),
        )
    };
    let before = sums(&m);
    let (grid, _) = parallel_decode(&m, &genre(1), 32, 4, 1.0, &mut rng(1)).unwrap();
    let src = clip(32, 2);
    let c = PoseConstraint::joints_everywhere(&src, skel, &[4, 7]).unwrap();
    let cfg = IttoConfig {
        iters: 20,
        ..IttoConfig::default()
    };
    let (out, report) = itto(&m, &grid, &c, cfg).unwrap();
    assert!(report.final_ <= report.initial);
    assert_eq!(out.len(), grid.len());
    assert_eq!(sums(&m), before);
    let empty = PoseConstraint::new(32, 13, vec![0.0; 32 * 39], vec![false; 32 * 13]).unwrap();
    assert!(matches!(itto(&m, &grid, &empty, cfg), Err(Error::NoConstraint)));
}

#[test]
fn spatial_edit_rejects_bad_constraints() {
    let m = models();
    let src = clip(32, 0);
    let b = genre(0);
    let none = PoseConstraint::new(32, 13, vec![0.0; 32 * 39], vec![false; 32 * 13]).unwrap();
    let cfg = IttoConfig::default();
    assert!(matches!(
        edit_spatial(&m, &src, &none, &b, 4, 1.0, cfg, &mut rng(0)),
        Err(Error::NoConstraint)
    ));
    let short = PoseConstraint::joints_everywhere(&clip(28, 0), &m.skeleton, &[1]).unwrap();
    assert!(matches!(
        edit_spatial(&m, &src, &short, &b, 4, 1.0, cfg, &mut rng(0)),
        Err(Error::Shape(_))
    ));
}

#[test]
fn temporal_edit_boundaries() {
    let m = models();
    let src = clip(48, 1);
    let b = genre(1);
    let all = edit_temporal(&m, &src, &[0..48], &b, 6, 1.0, &mut rng(3)).unwrap();
    let round_trip = m.tokenizer.decode(&m.tokenizer.encode(&src).unwrap(), FPS).unwrap();
    assert_eq!(all, round_trip);
    let fresh = edit_temporal(&m, &src, &[], &b, 6, 1.0, &mut rng(3)).unwrap();
    let (g, _) = parallel_decode(&m, &b, 48, 6, 1.0, &mut rng(3)).unwrap();
    assert_eq!(fresh, m.tokenizer.decode(&g, FPS).unwrap());
    let part = edit_temporal(&m, &src, &[0..16, 32..48], &b, 6, 1.0, &mut rng(3)).unwrap();
    assert_eq!(part.frames(), 48);
    for bad in [vec![0..49], vec![5..5], vec![0..20, 10..30]] {
        assert!(matches!(
            edit_temporal(&m, &src, &bad, &b, 6, 1.0, &mut rng(3)),
            Err(Error::InvalidRange(_))
        ));
    }
}

#[test]
fn long_generation_bookkeeping() {
    let m = models();
    let b = genre(3);
    let one = generate_long(&m, &[b.clone()], &[40], 4, 4, 1.0, &mut rng(6)).unwrap();
    let (g, _) = parallel_decode(&m, &b, 40, 4, 1.0, &mut rng(6)).unwrap();
    assert_eq!(one, m.tokenizer.decode(&g, FPS).unwrap());
    let three = generate_long(&m, &[b.clone(), genre(0), b.clone()], &[40, 32, 37], 4, 4, 1.0, &mut rng(6)).unwrap();
    assert_eq!(three.frames(), 109);
    assert_eq!(junction_frames(&[40, 32, 37]), vec![40, 72]);
    assert!(matches!(
        generate_long(&m, &[b.clone(), b.clone()], &[40, 28], 4, 4, 1.0, &mut rng(6)),
        Err(Error::SequenceTooShort { .. })
    ));
    assert!(matches!(
        generate_long(&m, &[b.clone()], &[40], 0, 4, 1.0, &mut rng(6)),
        Err(Error::Parameter(_))
    ));
}
