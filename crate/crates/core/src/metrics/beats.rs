use crate::error::{Error, Result};
use crate::motion::{MotionSequence, Skeleton};

/// Default kernel width. Beat times are compared in frame units.
pub const BAS_SIGMA_FRAMES: f64 = 3.0;

/// Binomial smoothing kernel for the joint-speed envelope (5 frames). A box
/// filter of the same width would cancel the half-beat modulation at common
/// tempos.
const SPEED_KERNEL: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];

/// Mean over music beats of `exp(-d^2 / (2 sigma^2))`, `d` being the distance
/// to the nearest dance beat. Units of `sigma` must match the beat lists.
/// An empty dance-beat list scores 0.
pub fn beat_align_score(music: &[f64], dance: &[f64], sigma: f64) -> Result<f64> {
    if music.is_empty() {
        return Err(Error::Parameter("beat alignment needs at least one music beat".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    if dance.is_empty() {
        tracing::warn!("no dance beats detected; beat alignment score is 0");
        return Ok(0.0);
    }
    let total: f64 = music
        .iter()
        .map(|m| {
            let d = dance.iter().map(|t| (t - m).abs()).fold(f64::INFINITY, f64::min);
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(total / music.len() as f64)
}

/// Total joint speed per frame (central differences, one-sided at the ends),
/// smoothed with a centred 5-frame binomial kernel renormalised at the edges.
pub fn speed_envelope(seq: &MotionSequence, skel: &Skeleton) -> Result<Vec<f64>> {
    let n = seq.frames();
    let pos = seq.joint_positions(skel)?;
    let w = skel.joints() * 3;
    let fps = seq.fps() as f64;
    let raw: Vec<f64> = (0..n)
        .map(|t| {
            let (a, b) = (t.saturating_sub(1), (t + 1).min(n - 1));
            let dt = (b - a) as f64 / fps;
            (0..skel.joints())
                .map(|j| {
                    let d: f64 = (0..3)
                        .map(|c| (pos[b * w + j * 3 + c] - pos[a * w + j * 3 + c]) as f64)
                        .map(|x| x * x)
                        .sum();
                    d.sqrt() / dt
                })
                .sum()
        })
        .collect();
    let h = SPEED_KERNEL.len() / 2;
    Ok((0..n)
        .map(|t| {
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (k, w) in SPEED_KERNEL.iter().enumerate() {
                let i = t as isize + k as isize - h as isize;
                if i >= 0 && (i as usize) < n {
                    acc += w * raw[i as usize];
                    wsum += w;
                }
            }
            acc / wsum
        })
        .collect())
}

/// Dance beats in seconds: local minima of the smoothed speed envelope.
pub fn extract_dance_beats(seq: &MotionSequence, skel: &Skeleton) -> Result<Vec<f64>> {
    let n = seq.frames();
    if n < 5 {
        return Err(Error::SequenceTooShort { needed: 5, got: n });
    }
    let s = speed_envelope(seq, skel)?;
    let peak = s.iter().copied().fold(0.0, f64::max);
    // ignore float ripple on constant-speed motion
    let tol = 1e-6 + 1e-4 * peak;
    let fps = seq.fps() as f64;
    let mut beats = Vec::new();
    let mut t = 1;
    while t + 1 < n {
        if s[t] + tol < s[t - 1] {
            // walk across a flat bottom
            let mut e = t;
            while e + 1 < n && (s[e + 1] - s[t]).abs() <= tol {
                e += 1;
            }
            if e + 1 < n && s[e + 1] > s[t] + tol {
                beats.push((t + e) as f64 / 2.0 / fps);
            }
            t = e + 1;
        } else {
            t += 1;
        }
    }
    Ok(beats)
}
