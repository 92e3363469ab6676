use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{gumbel_softmax_st, Bound, FkSpec, Tape, Var};
use crate::tokenizer::Tokenizer;

/// Per-frame foot displacement (m) below which the ground-truth foot counts
/// as planted.
pub const FOOT_CONTACT_THRESHOLD: f32 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KinematicWeights {
    pub pos: f32,
    pub vel: f32,
    pub acc: f32,
    pub foot: f32,
    pub pose: f32,
}

impl Default for KinematicWeights {
    fn default() -> Self {
        Self {
            pos: 0.5,
            vel: 0.1,
            acc: 0.05,
            foot: 0.1,
            pose: 1.0,
        }
    }
}

impl KinematicWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.pos, self.vel, self.acc, self.foot, self.pose];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

fn sq_sum(tape: &mut Tape<'_>, x: Var) -> Var {
    let s = tape.square(x);
    tape.sum(s)
}

/// `[L_pos, L_vel, L_acc, L_foot]` between predicted joint positions
/// `[.., N, J, 3]` and ground truth of the same shape.
///
/// Each term is a squared error summed over joints and coordinates and
/// averaged over frames (and leading axes). The foot term penalises the
/// predicted displacement of a foot in frames where the ground-truth foot
/// moves less than [`FOOT_CONTACT_THRESHOLD`].
pub fn kinematic_terms(
    tape: &mut Tape<'_>,
    pred: Var,
    gt: &[f32],
    fps: f32,
    feet: (usize, usize),
) -> Result<[Var; 4]> {
    let shape = tape.shape(pred).to_vec();
    if shape.len() < 3 || shape[shape.len() - 1] != 3 || gt.len() != tape.value(pred).len() {
        return Err(Error::shape(format!("kinematic terms on {shape:?} with {} targets", gt.len())));
    }
    let axis = shape.len() - 3;
    let (n, j) = (shape[axis], shape[axis + 1]);
    if n < 3 {
        return Err(Error::SequenceTooShort { needed: 3, got: n });
    }
    let outer: usize = shape[..axis].iter().product();
    let g = tape.constant_from(&shape, gt.to_vec())?;

    let d = tape.sub(pred, g)?;
    let pos = sq_sum(tape, d);
    let pos = tape.scale(pos, 1.0 / (outer * n) as f32);

    let vp = tape.time_diff(pred, axis, fps)?;
    let vg = tape.time_diff(g, axis, fps)?;
    let dv = tape.sub(vp, vg)?;
    let vel = sq_sum(tape, dv);
    let vel = tape.scale(vel, 1.0 / (outer * (n - 1)) as f32);

    let ap = tape.time_diff(vp, axis, fps)?;
    let ag = tape.time_diff(vg, axis, fps)?;
    let da = tape.sub(ap, ag)?;
    let acc = sq_sum(tape, da);
    let acc = tape.scale(acc, 1.0 / (outer * (n - 2)) as f32);

    let mut mask = vec![0.0; outer * (n - 1) * j * 3];
    for o in 0..outer {
        for t in 0..n - 1 {
            for &f in &[feet.0, feet.1] {
                let a = ((o * n + t) * j + f) * 3;
                let b = ((o * n + t + 1) * j + f) * 3;
                let disp = ((0..3).map(|k| (gt[b + k] - gt[a + k]).powi(2)).sum::<f32>()).sqrt();
                if disp < FOOT_CONTACT_THRESHOLD {
                    let m = ((o * (n - 1) + t) * j + f) * 3;
                    mask[m..m + 3].fill(1.0);
                }
            }
        }
    }
    let mut mshape = shape.clone();
    mshape[axis] = n - 1;
    let mask = tape.constant_from(&mshape, mask)?;
    let dp = tape.time_diff(pred, axis, 1.0)?;
    let dp = tape.mul(dp, mask)?;
    let foot = sq_sum(tape, dp);
    let foot = tape.scale(foot, 1.0 / (outer * (n - 1)) as f32);
    Ok([pos, vel, acc, foot])
}

/// `sum_valid |pred - target|^2 / sum(valid)` over `[.., N, J, 3]`
/// predictions; `target` and `valid` cover the same `N x J` layout (repeated
/// for any leading axis).
pub fn pose_discrepancy(tape: &mut Tape<'_>, pred: Var, target: &[f32], valid: &[bool]) -> Result<Var> {
    let len = tape.value(pred).len();
    if target.len() != len || valid.len() * 3 != len {
        return Err(Error::shape("pose discrepancy target layout"));
    }
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(Error::NoConstraint);
    }
    let shape = tape.shape(pred).to_vec();
    let mask: Vec<f32> = valid.iter().flat_map(|&v| [v as u8 as f32; 3]).collect();
    let masked_target: Vec<f32> = target.iter().zip(&mask).map(|(t, m)| t * m).collect();
    let m = tape.constant_from(&shape, mask)?;
    let t = tape.constant_from(&shape, masked_target)?;
    let pm = tape.mul(pred, m)?;
    let d = tape.sub(pm, t)?;
    let s = sq_sum(tape, d);
    Ok(tape.scale(s, 1.0 / count as f32))
}

/// Differentiable joint positions of motion sampled from `logits [B, n, K]`:
/// straight-through Gumbel one-hots pick layer-0 codes, `residual` supplies
/// the remaining layers' ids (`(layers-1) x B*n`), the frozen decoder and
/// forward kinematics follow. Returns `[B, 4n, J, 3]`.
#[allow(clippy::too_many_arguments)]
pub fn sampled_positions(
    tape: &mut Tape<'_>,
    tok: &Tokenizer,
    tp: &Bound,
    logits: Var,
    residual: &[usize],
    temperature: f32,
    fk: FkSpec,
    rng: &mut impl Rng,
) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 3 {
        return Err(Error::shape(format!("sampled positions expects [B, n, K], got {shape:?}")));
    }
    let (b, n, k) = (shape[0], shape[1], shape[2]);
    let rows = b * n;
    if residual.len() != (tok.config.layers - 1) * rows {
        return Err(Error::shape("residual ids do not cover every token"));
    }
    let (_, hard) = gumbel_softmax_st(tape, logits, temperature, rng)?;
    let hard = tape.reshape(hard, &[rows, k])?;
    let mut z = tape.matmul(hard, tp[tok.codebook_param(0)])?;
    for q in 1..tok.config.layers {
        let e = tape.embedding(tp[tok.codebook_param(q)], &residual[(q - 1) * rows..q * rows])?;
        z = tape.add(z, e)?;
    }
    let z = tape.reshape(z, &[b, n, tok.config.code_dim])?;
    let feats = tok.decode_features(tape, tp, z)?;
    tape.forward_kinematics(feats, fk)
}
