use std::ops::Range;

use super::Skeleton;
use crate::error::{Error, Result};

/// `N x D` pose-feature matrix sampled at `fps`.
///
/// Row layout: `[root_velocity(3) | local_joint_positions(3*(J-1)) |
/// foot_contact(2)]`. Root velocity is in m/s and integrates into the root
/// position of the following frame; local positions are relative to the
/// root of the same frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    fps: u32,
    dim: usize,
    data: Vec<f32>,
}

impl MotionSequence {
    pub fn new(fps: u32, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim < 8 || (dim - 5) % 3 != 0 {
            return Err(Error::shape(format!("feature width {dim} is not 3 + 3*(J-1) + 2")));
        }
        if data.len() % dim != 0 {
            return Err(Error::shape(format!("{} values do not split into rows of {dim}", data.len())));
        }
        if fps == 0 {
            return Err(Error::Parameter("fps must be positive".into()));
        }
        Ok(Self { fps, dim, data })
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn joints(&self) -> usize {
        (self.dim - 5) / 3 + 1
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f32] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn root_velocity_slice() -> Range<usize> {
        0..3
    }

    pub fn local_slice(&self) -> Range<usize> {
        3..self.dim - 2
    }

    pub fn contact_slice(&self) -> Range<usize> {
        self.dim - 2..self.dim
    }

    /// Frames `[start, start + len)` as a new sequence.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frames() {
            return Err(Error::InvalidRange(format!(
                "frames [{start}, {}) outside 0..{}",
                start + len,
                self.frames()
            )));
        }
        Self::new(self.fps, self.dim, self.data[start * self.dim..(start + len) * self.dim].to_vec())
    }

    /// Join sequences end to end.
    pub fn concat(parts: &[MotionSequence]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptySequence)?;
        if parts.iter().any(|p| p.dim != first.dim || p.fps != first.fps) {
            return Err(Error::shape("cannot join sequences with different layout"));
        }
        Self::new(first.fps, first.dim, parts.iter().flat_map(|p| p.data.iter().copied()).collect())
    }

    fn check_skeleton(&self, skel: &Skeleton) -> Result<()> {
        if skel.feature_dim() != self.dim {
            return Err(Error::shape(format!(
                "sequence width {} does not match skeleton width {}",
                self.dim,
                skel.feature_dim()
            )));
        }
        Ok(())
    }

    /// Global joint positions, `N x J x 3`, with the root starting at the
    /// skeleton's rest root position.
    pub fn joint_positions(&self, skel: &Skeleton) -> Result<Vec<f32>> {
        self.check_skeleton(skel)?;
        let mut out = vec![0.0; self.frames() * skel.joints() * 3];
        skel.fk_spec(self.fps).apply(&self.data, self.frames(), &mut out);
        Ok(out)
    }
}

/// Global joints of a single feature row given the accumulated root position.
pub fn forward_kinematics(row: &[f32], root: [f32; 3], skel: &Skeleton) -> Result<Vec<[f32; 3]>> {
    if row.len() != skel.feature_dim() {
        return Err(Error::shape(format!(
            "feature row of {} values, skeleton expects {}",
            row.len(),
            skel.feature_dim()
        )));
    }
    let mut out = vec![root; skel.joints()];
    for (j, p) in out.iter_mut().enumerate().skip(1) {
        for c in 0..3 {
            p[c] += row[3 + (j - 1) * 3 + c];
        }
    }
    Ok(out)
}

/// Joint velocity `(N-1) x J x 3` and acceleration `(N-2) x J x 3` by forward
/// differences of FK positions, scaled by fps.
pub fn derive_kinematics(seq: &MotionSequence, skel: &Skeleton) -> Result<(Vec<f32>, Vec<f32>)> {
    let n = seq.frames();
    if n < 3 {
        return Err(Error::SequenceTooShort { needed: 3, got: n });
    }
    let pos = seq.joint_positions(skel)?;
    let w = skel.joints() * 3;
    let fps = seq.fps() as f32;
    let vel = finite_difference(&pos, w, fps);
    let acc = finite_difference(&vel, w, fps);
    Ok((vel, acc))
}

/// Forward difference between consecutive rows of width `w`, times `scale`.
pub fn finite_difference(x: &[f32], w: usize, scale: f32) -> Vec<f32> {
    let rows = x.len() / w;
    let mut out = Vec::with_capacity(rows.saturating_sub(1) * w);
    for t in 1..rows {
        out.extend((0..w).map(|i| (x[t * w + i] - x[(t - 1) * w + i]) * scale));
    }
    out
}

/// Mean per-joint position error between two motions of equal length.
pub fn mpjpe(a: &MotionSequence, b: &MotionSequence, skel: &Skeleton) -> Result<f32> {
    if a.frames() != b.frames() {
        return Err(Error::shape("MPJPE needs sequences of equal length"));
    }
    if a.is_empty() {
        return Err(Error::EmptySequence);
    }
    let (pa, pb) = (a.joint_positions(skel)?, b.joint_positions(skel)?);
    let total: f64 = pa
        .chunks(3)
        .zip(pb.chunks(3))
        .map(|(x, y)| {
            let d: f32 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
            d.sqrt() as f64
        })
        .sum();
    Ok((total / (pa.len() / 3) as f64) as f32)
}
