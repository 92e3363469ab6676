use rand::seq::index::sample;
use rand::Rng;

use super::{MotionSequence, Skeleton};
use crate::error::{Error, Result};

/// Sparse joint-position targets, `N x J x 3`, with a validity mask.
/// Invalid entries always hold exact zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseConstraint {
    frames: usize,
    joints: usize,
    positions: Vec<f32>,
    valid: Vec<bool>,
}

impl PoseConstraint {
    /// Build a constraint; positions under an invalid flag are zeroed.
    pub fn new(frames: usize, joints: usize, mut positions: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        if positions.len() != frames * joints * 3 || valid.len() != frames * joints {
            return Err(Error::shape(format!(
                "constraint of {frames} x {joints} needs {} positions and {} flags",
                frames * joints * 3,
                frames * joints
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite constraint position".into()));
        }
        for (i, &ok) in valid.iter().enumerate() {
            if !ok {
                positions[i * 3..i * 3 + 3].fill(0.0);
            }
        }
        Ok(Self {
            frames,
            joints,
            positions,
            valid,
        })
    }

    /// Targets copied from the FK joints of `seq` wherever `valid` is set.
    pub fn from_motion(seq: &MotionSequence, skel: &Skeleton, valid: Vec<bool>) -> Result<Self> {
        let pos = seq.joint_positions(skel)?;
        Self::new(seq.frames(), skel.joints(), pos, valid)
    }

    /// Every listed joint valid in every frame.
    pub fn joints_everywhere(seq: &MotionSequence, skel: &Skeleton, joints: &[usize]) -> Result<Self> {
        let j = skel.joints();
        let valid = (0..seq.frames() * j).map(|i| joints.contains(&(i % j))).collect();
        Self::from_motion(seq, skel, valid)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn positions(&self) -> &[f32] {
        &self.positions
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, frame: usize, joint: usize) -> bool {
        self.valid[frame * self.joints + joint]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// `sum_valid |p_hat - p|^2 / sum I` against predicted `N x J x 3` joints.
    pub fn discrepancy(&self, predicted: &[f32]) -> Result<f32> {
        if predicted.len() != self.positions.len() {
            return Err(Error::shape("predicted joints do not match the constraint grid"));
        }
        let count = self.valid_count();
        if count == 0 {
            return Err(Error::NoConstraint);
        }
        let mut total = 0.0f64;
        for (i, _) in self.valid.iter().enumerate().filter(|(_, &v)| v) {
            for c in 0..3 {
                let d = (predicted[i * 3 + c] - self.positions[i * 3 + c]) as f64;
                total += d * d;
            }
        }
        Ok((total / count as f64) as f32)
    }

    /// Frames `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frames {
            return Err(Error::InvalidRange("constraint slice outside the clip".into()));
        }
        let (j, a, b) = (self.joints, start, start + len);
        Self::new(
            len,
            j,
            self.positions[a * j * 3..b * j * 3].to_vec(),
            self.valid[a * j..b * j].to_vec(),
        )
    }

    /// Training constraint: 1 to 4 random joints, valid on a random 10-50%
    /// of the frames.
    pub fn sample(seq: &MotionSequence, skel: &Skeleton, rng: &mut impl Rng) -> Result<Self> {
        let (n, j) = (seq.frames(), skel.joints());
        if n == 0 {
            return Err(Error::EmptySequence);
        }
        let joint_count = rng.gen_range(1..=4usize.min(j));
        let joints = sample(rng, j, joint_count).into_vec();
        let ratio = rng.gen_range(0.1..=0.5);
        let frame_count = ((ratio * n as f64).round() as usize).clamp(1, n);
        let frames = sample(rng, n, frame_count).into_vec();
        let mut valid = vec![false; n * j];
        for &f in &frames {
            for &jj in &joints {
                valid[f * j + jj] = true;
            }
        }
        Self::from_motion(seq, skel, valid)
    }
}
