//! Inference: guided logits, confidence-based parallel decoding, token
//! refinement against pose targets, editing and long-form stitching.

mod decode;
mod edit;
mod itto;

pub use decode::{decode_tokens, parallel_decode, sample_categorical, DecodeStep, DecodeTrace};
pub use edit::{edit_spatial, edit_temporal, generate_long, junction_frames, SpatialEdit};
pub use itto::{itto, itto_latents, refine_latents, IttoConfig, IttoReport, IttoRule};

use crate::adapters::{attach_forward, music_condition, pose_condition, AdapterTower, Attached, ResidualHead};
use crate::backbone::{pad_rows, MaskedTransformer, TokenBatch};
use crate::error::{Error, Result};
use crate::motion::{BeatTrack, PoseConstraint, Skeleton, MUSIC_DIM};
use crate::tensor::Tape;
use crate::tokenizer::{Tokenizer, DOWNSAMPLE};

/// How conditional and unconditional logits are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CfgMode {
    /// `l_u + sum_m w_m (l_m - l_u)`.
    #[default]
    Delta,
    /// `(1 - w_u) l_u + sum_m w_m l_m`.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidanceWeights {
    pub uncond: f32,
    pub text: f32,
    pub music: f32,
    pub pose: f32,
}

impl Default for GuidanceWeights {
    fn default() -> Self {
        Self {
            uncond: 0.0,
            text: 4.0,
            music: 1.0,
            pose: 1.0,
        }
    }
}

/// Fuse per-branch logits. Absent branches contribute nothing.
pub fn cfg_fuse(
    uncond: &[f32],
    text: Option<&[f32]>,
    music: Option<&[f32]>,
    pose: Option<&[f32]>,
    w: &GuidanceWeights,
    mode: CfgMode,
) -> Result<Vec<f32>> {
    let branches = [(text, w.text), (music, w.music), (pose, w.pose)];
    if branches.iter().flat_map(|b| b.0).any(|l| l.len() != uncond.len()) {
        return Err(Error::shape("guidance branches differ in logit shape"));
    }
    // delta form evaluated as (1 - sum w) l_u + sum w l_m, so a single unit
    // weight or all-zero weights reproduce a branch exactly
    let base = match mode {
        CfgMode::Delta => 1.0 - branches.iter().filter(|b| b.0.is_some()).map(|b| b.1).sum::<f32>(),
        CfgMode::Linear => 1.0 - w.uncond,
    };
    let mut out: Vec<f32> = uncond.iter().map(|u| base * u).collect();
    for (l, wm) in branches {
        let Some(l) = l.filter(|_| wm != 0.0) else { continue };
        for (o, c) in out.iter_mut().zip(l) {
            *o += wm * c;
        }
    }
    Ok(out)
}

/// Conditions and weights for one generation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GuidanceBundle {
    pub genre: Option<usize>,
    pub music: Option<BeatTrack>,
    pub pose: Option<PoseConstraint>,
    pub weights: GuidanceWeights,
    pub mode: CfgMode,
    /// Allows a bundle without any condition.
    pub unconditional: bool,
}

impl GuidanceBundle {
    pub fn validate(&self) -> Result<()> {
        if self.genre.is_none() && self.music.is_none() && self.pose.is_none() && !self.unconditional {
            return Err(Error::Usage(
                "guidance needs a genre, music or pose condition, or the unconditional flag".into(),
            ));
        }
        Ok(())
    }
}

/// Every network the sampler may use.
#[derive(Clone, Debug, PartialEq)]
pub struct Models {
    pub skeleton: Skeleton,
    pub tokenizer: Tokenizer,
    pub backbone: MaskedTransformer,
    pub music: Option<AdapterTower>,
    pub pose: Option<AdapterTower>,
    pub residual: Option<ResidualHead>,
}

impl Models {
    /// Music features for `n` tokens, the last frame repeated when short.
    pub(crate) fn music_rows(track: &BeatTrack, n: usize) -> Vec<f32> {
        pad_rows(track.features(), MUSIC_DIM, n * DOWNSAMPLE)
    }

    fn adapter_logits(
        &self,
        tower: &AdapterTower,
        ids: &[usize],
        genre: Option<usize>,
        cond: Vec<f32>,
    ) -> Result<Vec<f32>> {
        let n = ids.len();
        let mut tape = Tape::new();
        let bp = tape.bind(&self.backbone.params, false);
        let ap = tape.bind(&tower.tower.params, false);
        let cv = tape.constant_from(&[1, n, tower.cond_dim()], cond)?;
        let y = attach_forward(
            &mut tape,
            &self.backbone,
            &bp,
            &[Attached {
                tower,
                params: &ap,
                cond: cv,
            }],
            &TokenBatch::single(ids.to_vec(), genre),
        )?;
        Ok(tape.value(y).to_vec())
    }

    /// Fused logits `[n, K]` for the current ids under `bundle`. The music
    /// and pose branches run with the null genre so each branch isolates its
    /// own modality.
    pub fn guided_logits(&self, bundle: &GuidanceBundle, ids: &[usize]) -> Result<Vec<f32>> {
        let n = ids.len();
        let uncond = self.backbone.logits(ids, None)?;
        let text = match bundle.genre {
            Some(g) => Some(self.backbone.logits(ids, Some(g))?),
            None => None,
        };
        let music = match (&bundle.music, &self.music) {
            (Some(track), Some(tower)) => {
                let cond = music_condition(&Self::music_rows(track, n), n);
                Some(self.adapter_logits(tower, ids, None, cond)?)
            }
            (Some(_), None) => return Err(Error::Prerequisite("music guidance needs a trained music adapter".into())),
            _ => None,
        };
        let pose = match (&bundle.pose, &self.pose) {
            (Some(c), Some(tower)) => {
                let cond = pose_condition(c, self.skeleton.root_rest(), n);
                Some(self.adapter_logits(tower, ids, None, cond)?)
            }
            (Some(_), None) => return Err(Error::Prerequisite("pose guidance needs a trained pose adapter".into())),
            _ => None,
        };
        cfg_fuse(
            &uncond,
            text.as_deref(),
            music.as_deref(),
            pose.as_deref(),
            &bundle.weights,
            bundle.mode,
        )
    }
}
