mod common;

use common::{grad_check, random_tensor, rng};
use masked_motion::error::Error;
use masked_motion::tensor::{gumbel_softmax_st, FkSpec, Tape, Tensor};
use proptest::prelude::*;

const EPS: f32 = 1e-3;
const TOL: f64 = 1e-3;

fn rt(shape: &[usize], seed: u64) -> Tensor {
    random_tensor(shape, 1.0, &mut rng(seed))
}

/// Values bounded away from zero so kinks of relu/abs are not straddled.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    let mut t = rt(shape, seed);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

#[test]
fn matmul_examples() {
    let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let b = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
    assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 7.0]);
    let b = rt(&[3, 4], 3);
    assert_eq!(Tensor::identity(3).matmul(&b).unwrap().data(), b.data());
    let z = Tensor::zeros(vec![2, 3]).matmul(&b).unwrap();
    assert!(z.data().iter().all(|&v| v == 0.0));
    assert!(matches!(b.matmul(&b), Err(Error::Shape(_))));
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![3], vec![0.0; 3]).unwrap());
    let y = tape.softmax(x).unwrap();
    for &v in tape.value(y) {
        assert!((v - 1.0 / 3.0).abs() < 1e-7);
    }
    let x = tape.constant(Tensor::new(vec![3], vec![1f32.ln(), 2f32.ln(), 3f32.ln()]).unwrap());
    let y = tape.softmax(x).unwrap();
    for (v, e) in tape.value(y).iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
        assert!((v - e).abs() < 1e-6);
    }
    let nan = tape.constant(Tensor::new(vec![2], vec![f32::NAN, 0.0]).unwrap());
    assert!(matches!(tape.softmax(nan), Err(Error::Numeric(_))));
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::new();
    let mut v = vec![0.0; 8];
    v[2] = 40.0;
    let x = tape.constant(Tensor::new(vec![1, 8], v).unwrap());
    let l = tape.cross_entropy(x, &[2], &[1.0]).unwrap();
    assert!(tape.scalar(l) < 1e-6);
    let x = tape.constant(Tensor::zeros(vec![3, 8]));
    let l = tape.cross_entropy(x, &[0, 5, 7], &[1.0, 1.0, 1.0]).unwrap();
    assert!((tape.scalar(l) - 8f32.ln()).abs() < 1e-6);
    assert!(matches!(
        tape.cross_entropy(x, &[0, 5, 7], &[0.0; 3]),
        Err(Error::DegenerateLoss(_))
    ));
}

#[test]
fn cross_entropy_ignores_zero_weight_rows() {
    let base = rt(&[4, 6], 11);
    let loss = |t: &Tensor| {
        let mut tape = Tape::new();
        let x = tape.constant(t.clone());
        let l = tape.cross_entropy(x, &[1, 2, 3, 4], &[1.0, 0.0, 2.0, 1.0]).unwrap();
        tape.scalar(l)
    };
    let mut moved = base.clone();
    for v in &mut moved.data_mut()[6..12] {
        *v += 5.0;
    }
    assert_eq!(loss(&base), loss(&moved));
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad());
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0, 1.0]);

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad());
    let sq = tape.square(x);
    let s = tape.sum(sq);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[2.0, 4.0]);
    assert!(matches!(tape.backward(s), Err(Error::Tape(_))));

    let mut tape = Tape::new();
    let c = tape.constant(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let s = tape.sum(c);
    assert!(matches!(tape.backward(s), Err(Error::Tape(_))));
}

#[test]
fn fd_matmul() {
    let e = grad_check(&[rt(&[4, 5], 1), rt(&[5, 3], 2)], EPS, |t, v| t.matmul(v[0], v[1]));
    assert!(e < TOL, "{e}");
    let e = grad_check(&[rt(&[2, 4, 5], 1), rt(&[5, 3], 2)], EPS, |t, v| t.matmul(v[0], v[1]));
    assert!(e < TOL, "{e}");
}

#[test]
fn fd_elementwise() {
    let (a, b) = (rt(&[4, 5], 3), rt(&[4, 5], 4));
    for (name, e) in [
        ("add", grad_check(&[a.clone(), b.clone()], EPS, |t, v| t.add(v[0], v[1]))),
        ("sub", grad_check(&[a.clone(), b.clone()], EPS, |t, v| t.sub(v[0], v[1]))),
        ("mul", grad_check(&[a.clone(), b.clone()], EPS, |t, v| t.mul(v[0], v[1]))),
        ("scale", grad_check(&[a.clone()], EPS, |t, v| Ok(t.scale(v[0], -1.7)))),
        ("gelu", grad_check(&[a.clone()], EPS, |t, v| Ok(t.gelu(v[0])))),
        ("relu", grad_check(&[away_from_zero(&[4, 5], 5)], EPS, |t, v| Ok(t.relu(v[0])))),
        ("abs", grad_check(&[away_from_zero(&[4, 5], 6)], EPS, |t, v| Ok(t.abs(v[0])))),
        ("bcast", grad_check(&[a.clone(), rt(&[5], 7)], EPS, |t, v| t.add_broadcast(v[0], v[1]))),
        ("bcast_mul", grad_check(&[a.clone(), rt(&[5], 8)], EPS, |t, v| t.mul_broadcast(v[0], v[1]))),
        ("sum", grad_check(&[a.clone()], EPS, |t, v| Ok(t.sum(v[0])))),
        ("mean", grad_check(&[a.clone()], EPS, |t, v| Ok(t.mean(v[0])))),
    ] {
        assert!(e < TOL, "{name}: {e}");
    }
}

#[test]
fn fd_normalisation_and_probability() {
    let x = rt(&[4, 5], 8);
    let e = grad_check(&[x.clone()], EPS, |t, v| t.softmax(v[0]));
    assert!(e < TOL, "softmax {e}");
    let e = grad_check(&[x.clone(), rt(&[5], 9), rt(&[5], 10)], EPS, |t, v| {
        t.layer_norm(v[0], v[1], v[2])
    });
    assert!(e < TOL, "layer_norm {e}");
    let e = grad_check(&[x], EPS, |t, v| t.cross_entropy(v[0], &[0, 4, 2, 1], &[1.0, 0.5, 0.0, 2.0]));
    assert!(e < TOL, "cross_entropy {e}");
}

#[test]
fn fd_attention() {
    let qkv = rt(&[2, 5, 12], 12);
    let e = grad_check(&[qkv.clone()], EPS, |t, v| t.attention(v[0], 2, None));
    assert!(e < TOL, "attention {e}");
    let mask = [true, true, true, false, false, true, true, true, true, true];
    let e = grad_check(&[qkv], EPS, |t, v| t.attention(v[0], 2, Some(&mask)));
    assert!(e < TOL, "masked attention {e}");
}

#[test]
fn attention_matches_naive_reference() {
    let (b, s, w, h) = (2, 4, 6, 3);
    let qkv = rt(&[b, s, 3 * w], 13);
    let mask: Vec<bool> = (0..b * s).map(|i| i % 4 != 2).collect();
    let mut tape = Tape::new();
    let x = tape.constant(qkv.clone());
    let out = tape.attention(x, h, Some(&mask)).unwrap();
    let got = tape.value(out).to_vec();
    let d = qkv.data();
    let dh = w / h;
    for bb in 0..b {
        for hh in 0..h {
            for i in 0..s {
                let at = |r: usize, part: usize, c: usize| d[(bb * s + r) * 3 * w + part * w + hh * dh + c];
                let mut scores: Vec<f64> = (0..s)
                    .map(|j| {
                        if !mask[bb * s + j] {
                            return f64::NEG_INFINITY;
                        }
                        (0..dh).map(|c| at(i, 0, c) as f64 * at(j, 1, c) as f64).sum::<f64>() / (dh as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|v| (v - m).exp()).sum();
                for v in &mut scores {
                    *v = (*v - m).exp() / z;
                }
                for c in 0..dh {
                    let r: f64 = (0..s).map(|j| scores[j] * at(j, 2, c) as f64).sum();
                    let g = got[(bb * s + i) * w + hh * dh + c] as f64;
                    assert!((r - g).abs() < 1e-5, "{r} vs {g}");
                }
            }
        }
    }
}

#[test]
fn fd_layout_ops() {
    let x = rt(&[3, 4, 5], 14);
    let e = grad_check(&[x.clone()], EPS, |t, v| t.narrow(v[0], 1, 1, 2));
    assert!(e < TOL, "narrow {e}");
    let e = grad_check(&[x.clone(), rt(&[3, 2, 5], 15)], EPS, |t, v| t.concat(&[v[0], v[1]], 1));
    assert!(e < TOL, "concat {e}");
    let e = grad_check(&[x.clone()], EPS, |t, v| t.reshape(v[0], &[12, 5]));
    assert!(e < TOL, "reshape {e}");
    let e = grad_check(&[rt(&[6, 4], 16)], EPS, |t, v| t.embedding(v[0], &[0, 3, 3, 5, 1]));
    assert!(e < TOL, "embedding {e}");
    let e = grad_check(&[x.clone()], EPS, |t, v| t.unfold1d(v[0], 3, 1, 1));
    assert!(e < TOL, "unfold {e}");
    let e = grad_check(&[rt(&[2, 8, 3], 17)], EPS, |t, v| t.unfold1d(v[0], 4, 2, 1));
    assert!(e < TOL, "strided unfold {e}");
    let e = grad_check(&[x.clone()], EPS, |t, v| t.upsample(v[0], 2));
    assert!(e < TOL, "upsample {e}");
    let e = grad_check(&[x], EPS, |t, v| t.time_diff(v[0], 1, 20.0));
    assert!(e < TOL, "time_diff {e}");
}

#[test]
fn fd_forward_kinematics() {
    let spec = FkSpec {
        joints: 4,
        fps: 20.0,
        origin: [0.1, -0.2, 0.9],
    };
    let e = grad_check(&[rt(&[2, 5, spec.feature_dim()], 18)], EPS, |t, v| t.forward_kinematics(v[0], spec));
    assert!(e < TOL, "fk {e}");
}

#[test]
fn gumbel_hard_gradient_equals_soft_gradient() {
    let logits = rt(&[3, 6], 20);
    let w = rt(&[3, 6], 21);
    let grad_of = |use_hard: bool| {
        let mut tape = Tape::new();
        let x = tape.leaf(logits.clone().with_grad());
        let (soft, hard) = gumbel_softmax_st(&mut tape, x, 0.7, &mut rng(5)).unwrap();
        let wv = tape.constant(w.clone());
        let y = tape.mul(if use_hard { hard } else { soft }, wv).unwrap();
        let s = tape.sum(y);
        let mut g = tape.backward(s).unwrap();
        g.take(x).unwrap()
    };
    assert_eq!(grad_of(true), grad_of(false));
}

#[test]
fn gumbel_rejects_bad_temperature_and_picks_dominant() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![3], vec![10.0, 0.0, 0.0]).unwrap());
    assert!(matches!(gumbel_softmax_st(&mut tape, x, 0.0, &mut rng(0)), Err(Error::Parameter(_))));
    let mut r = rng(1);
    for _ in 0..200 {
        let (_, hard) = gumbel_softmax_st(&mut tape, x, 1e-8, &mut r).unwrap();
        let h = tape.value(hard);
        // P(wrong class) is about 2 e^-10 per draw
        assert_eq!(h, &[1.0, 0.0, 0.0]);
    }
}

#[test]
fn gumbel_uniform_frequencies_fall_in_chi_square_band() {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let k = 5;
    let draws = 100_000;
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(vec![draws, k]));
    let (_, hard) = gumbel_softmax_st(&mut tape, x, 1.0, &mut rng(2)).unwrap();
    let mut counts = vec![0f64; k];
    for row in tape.value(hard).chunks(k) {
        counts[row.iter().position(|&v| v == 1.0).unwrap()] += 1.0;
    }
    let expect = draws as f64 / k as f64;
    let chi: f64 = counts.iter().map(|c| (c - expect).powi(2) / expect).sum();
    let crit = ChiSquared::new((k - 1) as f64).unwrap().inverse_cdf(0.99);
    assert!(chi < crit, "chi2 {chi} >= {crit}");
}

#[test]
fn replay_is_bit_identical() {
    let run = || {
        let mut tape = Tape::new();
        let a = tape.leaf(rt(&[2, 5, 12], 30).with_grad());
        let att = tape.attention(a, 2, None).unwrap();
        let (_, hard) = gumbel_softmax_st(&mut tape, att, 1.0, &mut rng(9)).unwrap();
        let s = common::project(&mut tape, hard, 4).unwrap();
        let v = tape.scalar(s);
        let mut g = tape.backward(s).unwrap();
        (v.to_bits(), g.take(a).unwrap().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(data in proptest::collection::vec(-50f32..50.0, 1..64), cols in 1usize..8) {
        let rows = data.len() / cols;
        prop_assume!(rows > 0);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![rows, cols], data[..rows * cols].to_vec()).unwrap());
        let y = tape.softmax(x).unwrap();
        for row in tape.value(y).chunks(cols) {
            let s: f64 = row.iter().map(|&v| v as f64).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&v| v >= 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn softmax_shift_invariant(data in proptest::collection::vec(-20f32..20.0, 4), c in -10f32..10.0) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![4], data.clone()).unwrap());
        let xs = tape.constant(Tensor::new(vec![4], data.iter().map(|v| v + c).collect()).unwrap());
        let (a, b) = (tape.softmax(x).unwrap(), tape.softmax(xs).unwrap());
        for (p, q) in tape.value(a).iter().zip(tape.value(b)) {
            prop_assert!((p - q).abs() < 1e-5);
        }
    }

    #[test]
    fn gumbel_hard_is_one_hot(seed in 0u64..1000, t in 0.05f32..5.0) {
        let mut tape = Tape::new();
        let x = tape.constant(rt(&[3, 7], seed));
        let (_, hard) = gumbel_softmax_st(&mut tape, x, t, &mut rng(seed)).unwrap();
        for row in tape.value(hard).chunks(7) {
            prop_assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            prop_assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 6);
        }
    }
}
