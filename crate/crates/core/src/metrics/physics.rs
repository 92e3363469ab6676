use crate::error::{Error, Result};
use crate::motion::{finite_difference, MotionSequence, Skeleton};

pub const FSR_CONTACT_HEIGHT: f32 = 0.05;
pub const FSR_SLIDE_SPEED: f32 = 0.1;

fn norm3(v: &[f32]) -> f64 {
    (v[0] as f64 * v[0] as f64 + v[1] as f64 * v[1] as f64 + v[2] as f64 * v[2] as f64).sqrt()
}

/// Physical foot contact score.
///
/// For each acceleration frame `i`, `s_i = |a_com| * |v_left| * |v_right|`
/// where the COM is the mean of all joints and its vertical acceleration is
/// clamped at 0 from below. The sum is divided by `N * max_i |a_com|`; a
/// clip with no COM acceleration scores 0.
pub fn pfc(seq: &MotionSequence, skel: &Skeleton) -> Result<f64> {
    let n = seq.frames();
    if n < 3 {
        return Err(Error::SequenceTooShort { needed: 3, got: n });
    }
    let pos = seq.joint_positions(skel)?;
    let j = skel.joints();
    let fps = seq.fps() as f32;
    let com: Vec<f32> = (0..n)
        .flat_map(|t| {
            let frame = &pos[t * j * 3..(t + 1) * j * 3];
            (0..3).map(move |c| frame.iter().skip(c).step_by(3).sum::<f32>() / j as f32)
        })
        .collect();
    let com_v = finite_difference(&com, 3, fps);
    let mut com_a = finite_difference(&com_v, 3, fps);
    for a in com_a.chunks_mut(3) {
        a[2] = a[2].max(0.0);
    }
    let vel = finite_difference(&pos, j * 3, fps);
    let (lf, rf) = skel.feet();
    let a_norm: Vec<f64> = com_a.chunks(3).map(norm3).collect();
    let max_a = a_norm.iter().copied().fold(0.0, f64::max);
    if max_a == 0.0 {
        return Ok(0.0);
    }
    let total: f64 = a_norm
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let v = &vel[i * j * 3..(i + 1) * j * 3];
            a * norm3(&v[lf * 3..lf * 3 + 3]) * norm3(&v[rf * 3..rf * 3 + 3])
        })
        .sum();
    Ok(total / (n as f64 * max_a))
}

/// Fraction of frames in which some foot is below `h_contact` while its
/// horizontal speed exceeds `v_slide`. The last frame reuses the final
/// velocity.
pub fn foot_skating_ratio(seq: &MotionSequence, skel: &Skeleton, h_contact: f32, v_slide: f32) -> Result<f64> {
    if !(h_contact > 0.0 && v_slide > 0.0) {
        return Err(Error::Parameter("foot-skating thresholds must be positive".into()));
    }
    let n = seq.frames();
    if n < 2 {
        return Err(Error::SequenceTooShort { needed: 2, got: n });
    }
    let pos = seq.joint_positions(skel)?;
    let j = skel.joints();
    let fps = seq.fps() as f32;
    let (lf, rf) = skel.feet();
    let sliding = (0..n)
        .filter(|&t| {
            let (a, b) = if t + 1 < n { (t, t + 1) } else { (t - 1, t) };
            [lf, rf].iter().any(|&f| {
                let p = |fr: usize, c: usize| pos[(fr * j + f) * 3 + c];
                let vx = (p(b, 0) - p(a, 0)) * fps;
                let vy = (p(b, 1) - p(a, 1)) * fps;
                p(t, 2) < h_contact && (vx * vx + vy * vy).sqrt() > v_slide
            })
        })
        .count();
    Ok(sliding as f64 / n as f64)
}
