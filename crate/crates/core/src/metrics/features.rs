use crate::error::{Error, Result};
use crate::motion::{derive_kinematics, joint, MotionSequence, Skeleton};

/// Number of geometric pose predicates.
pub const GEOMETRIC_DIM: usize = 12;

/// Names of the geometric predicates, in feature order.
pub const GEOMETRIC_PREDICATES: [&str; GEOMETRIC_DIM] = [
    "l_hand_above_head",
    "r_hand_above_head",
    "feet_crossed",
    "knee_bent_beyond_90",
    "hands_apart_beyond_shoulder_width",
    "l_hand_above_waist",
    "r_hand_above_waist",
    "l_hand_forward",
    "r_hand_forward",
    "foot_raised",
    "torso_leaning",
    "crouching",
];

fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count().max(1) as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Per joint: mean and variance of speed, then mean and variance of
/// acceleration magnitude (`4 * J` values).
pub fn kinematic_features(seq: &MotionSequence, skel: &Skeleton) -> Result<Vec<f64>> {
    let (vel, acc) = derive_kinematics(seq, skel)?;
    let j = skel.joints();
    let mags = |buf: &[f32], jj: usize| -> Vec<f64> {
        buf.chunks(j * 3)
            .map(|f| {
                let v = &f[jj * 3..jj * 3 + 3];
                ((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) as f64).sqrt()
            })
            .collect()
    };
    let mut out = Vec::with_capacity(4 * j);
    for jj in 0..j {
        let (sm, sv) = mean_var(mags(&vel, jj).into_iter());
        let (am, av) = mean_var(mags(&acc, jj).into_iter());
        out.extend([sm, sv, am, av]);
    }
    Ok(out)
}

type P = [f32; 3];

fn sub(a: P, b: P) -> P {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: P, b: P) -> f32 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn d(a: P, b: P) -> f32 {
    dot(sub(a, b), sub(a, b)).sqrt()
}

fn predicates(p: &[P], rest_root_z: f32) -> [bool; GEOMETRIC_DIM] {
    use joint::*;
    let shoulder_width = d(p[L_SHOULDER], p[R_SHOULDER]);
    // interior knee angle below 90 degrees
    let knee_bent = |knee: usize, foot: usize| dot(sub(p[PELVIS], p[knee]), sub(p[foot], p[knee])) > 0.0;
    let torso = sub(p[SPINE], p[PELVIS]);
    let torso_len = dot(torso, torso).sqrt().max(1e-6);
    let horizontal = (torso[0] * torso[0] + torso[1] * torso[1]).sqrt();
    let waist = p[PELVIS][2] + 0.1;
    [
        p[L_HAND][2] > p[HEAD][2],
        p[R_HAND][2] > p[HEAD][2],
        p[L_FOOT][0] < p[R_FOOT][0],
        knee_bent(L_KNEE, L_FOOT) || knee_bent(R_KNEE, R_FOOT),
        d(p[L_HAND], p[R_HAND]) > 1.25 * shoulder_width,
        p[L_HAND][2] > waist,
        p[R_HAND][2] > waist,
        p[L_HAND][1] > p[PELVIS][1] + 0.1,
        p[R_HAND][1] > p[PELVIS][1] + 0.1,
        p[L_FOOT][2] > 0.06 || p[R_FOOT][2] > 0.06,
        // more than about 10 degrees from vertical
        horizontal / torso_len > 0.17,
        p[PELVIS][2] < rest_root_z - 0.02,
    ]
}

/// Frequency of each geometric predicate over the frames of the clip.
/// Defined on the 13-joint desk skeleton.
pub fn geometric_features(seq: &MotionSequence, skel: &Skeleton) -> Result<Vec<f64>> {
    if skel.joints() != 13 {
        return Err(Error::Parameter("geometric predicates are defined on the 13-joint skeleton".into()));
    }
    let n = seq.frames();
    if n < 3 {
        return Err(Error::SequenceTooShort { needed: 3, got: n });
    }
    let pos = seq.joint_positions(skel)?;
    let mut counts = [0usize; GEOMETRIC_DIM];
    for f in pos.chunks(13 * 3) {
        let p: Vec<P> = f.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        for (k, hit) in predicates(&p, skel.root_rest()[2]).iter().enumerate() {
            counts[k] += *hit as usize;
        }
    }
    Ok(counts.iter().map(|&c| c as f64 / n as f64).collect())
}
