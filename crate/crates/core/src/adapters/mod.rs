//! Music and pose adapter towers attached to a frozen backbone through
//! zero-initialised bridges, their auxiliary losses, and the residual-layer
//! head.

mod losses;
mod residual;
mod train;

pub use losses::{kinematic_terms, pose_discrepancy, sampled_positions, KinematicWeights, FOOT_CONTACT_THRESHOLD};
pub use residual::{ResidualHead, ResidualTrainConfig, ResidualTrainer};
pub use train::{AdapterTrainConfig, AdapterTrainer};

use rand::Rng;

use crate::backbone::{MaskedTransformer, TokenBatch};
use crate::error::{Error, Result};
use crate::motion::{PoseConstraint, MUSIC_DIM};
use crate::nn::Linear;
use crate::tensor::{Bound, Tape, Var};
use crate::tokenizer::DOWNSAMPLE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AdapterKind {
    Music,
    Pose,
}

impl AdapterKind {
    /// Width of the per-token condition vector.
    pub fn cond_dim(self, joints: usize) -> usize {
        match self {
            AdapterKind::Music => MUSIC_DIM,
            AdapterKind::Pose => joints * 3 + joints,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AdapterKind::Music => "music_adapter",
            AdapterKind::Pose => "pose_adapter",
        }
    }
}

/// Trainable copy of the backbone plus a condition encoder and one
/// zero-initialised bridge per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterTower {
    pub kind: AdapterKind,
    /// Backbone copy; its parameter set also holds the encoder and bridges.
    pub tower: MaskedTransformer,
    cond: Linear,
    bridges: Vec<Linear>,
}

impl AdapterTower {
    pub fn new(kind: AdapterKind, backbone: &MaskedTransformer, joints: usize, rng: &mut impl Rng) -> Self {
        let mut tower = backbone.clone();
        let w = backbone.config.width;
        let cond = Linear::new(&mut tower.params, "cond", kind.cond_dim(joints), w, rng);
        let bridges = (0..backbone.config.layers)
            .map(|l| Linear::zeroed(&mut tower.params, &format!("bridge.{l}"), w, w))
            .collect();
        Self {
            kind,
            tower,
            cond,
            bridges,
        }
    }

    pub fn cond_dim(&self) -> usize {
        self.cond.fan_in
    }

    /// Per-layer contributions for the backbone: tower layer `l`'s output
    /// through bridge `l`. `cond` is `[batch, len, cond_dim]`.
    pub fn injections(&self, tape: &mut Tape<'_>, p: &Bound, batch: &TokenBatch, cond: Var) -> Result<Vec<Var>> {
        let cs = tape.shape(cond).to_vec();
        if cs != [batch.batch, batch.len, self.cond_dim()] {
            return Err(Error::shape(format!(
                "condition {cs:?} for a batch of {} x {} with width {}",
                batch.batch,
                batch.len,
                self.cond_dim()
            )));
        }
        let w = self.tower.config.width;
        let kv = batch.key_valid(self.tower.config.pad_id());
        let mut t = self.tower.embed(tape, p, batch)?;
        let c = self.cond.forward(tape, p, cond)?;
        let zero = tape.constant_from(&[batch.batch, 1, w], vec![0.0; batch.batch * w])?;
        let c = tape.concat(&[zero, c], 1)?;
        t = tape.add(t, c)?;
        let mut out = Vec::with_capacity(self.bridges.len());
        for (block, bridge) in self.tower.blocks().iter().zip(&self.bridges) {
            t = block.forward(tape, p, t, kv.as_deref())?;
            out.push(bridge.forward(tape, p, t)?);
        }
        Ok(out)
    }
}

/// One adapter taking part in a forward pass: the tower, its bound
/// parameters and its condition tensor.
pub struct Attached<'t> {
    pub tower: &'t AdapterTower,
    pub params: &'t Bound,
    pub cond: Var,
}

/// Backbone logits with every listed adapter's bridges added to the
/// matching layer inputs.
pub fn attach_forward(
    tape: &mut Tape<'_>,
    backbone: &MaskedTransformer,
    bp: &Bound,
    adapters: &[Attached<'_>],
    batch: &TokenBatch,
) -> Result<Var> {
    let layers = backbone.config.layers;
    let mut inject: Vec<Option<Var>> = vec![None; layers];
    for a in adapters {
        if a.tower.bridges.len() != layers {
            return Err(Error::Config(format!(
                "adapter has {} layers, backbone {layers}",
                a.tower.bridges.len()
            )));
        }
        let inj = a.tower.injections(tape, a.params, batch, a.cond)?;
        for (slot, v) in inject.iter_mut().zip(inj) {
            *slot = Some(match slot.take() {
                Some(prev) => tape.add(prev, v)?,
                None => v,
            });
        }
    }
    if adapters.is_empty() {
        inject.clear();
    }
    backbone.forward(tape, bp, batch, &inject)
}

/// Average per-frame rows over each token's frames: `frames x w` to `n x w`.
/// Missing frames count as zeros.
pub fn pool_frames(data: &[f32], width: usize, n: usize) -> Vec<f32> {
    let frames = data.len() / width;
    let mut out = vec![0.0; n * width];
    for i in 0..n {
        for f in i * DOWNSAMPLE..(i + 1) * DOWNSAMPLE {
            if f < frames {
                for c in 0..width {
                    out[i * width + c] += data[f * width + c] / DOWNSAMPLE as f32;
                }
            }
        }
    }
    out
}

/// Music condition for `n` tokens from per-frame features.
pub fn music_condition(features: &[f32], n: usize) -> Vec<f32> {
    pool_frames(features, MUSIC_DIM, n)
}

/// Pose condition for `n` tokens: per frame, joint positions relative to
/// `origin` (zero where invalid) followed by the validity flags, pooled.
pub fn pose_condition(c: &PoseConstraint, origin: [f32; 3], n: usize) -> Vec<f32> {
    let j = c.joints();
    let w = j * 4;
    let mut rows = vec![0.0; c.frames() * w];
    for f in 0..c.frames() {
        for jj in 0..j {
            if c.is_valid(f, jj) {
                let p = &c.positions()[(f * j + jj) * 3..(f * j + jj) * 3 + 3];
                for k in 0..3 {
                    rows[f * w + jj * 3 + k] = p[k] - origin[k];
                }
                rows[f * w + j * 3 + jj] = 1.0;
            }
        }
    }
    pool_frames(&rows, w, n)
}
