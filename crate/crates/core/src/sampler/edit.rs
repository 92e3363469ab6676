use std::ops::Range;

use rand::Rng;

use super::decode::fill_residual;
use super::{decode_tokens, itto, GuidanceBundle, IttoConfig, IttoReport, Models};
use crate::error::{Error, Result};
use crate::metrics::joint_distance;
use crate::motion::{BeatTrack, MotionSequence, PoseConstraint};
use crate::tokenizer::{TokenGrid, DOWNSAMPLE};

/// Result of a spatial edit with the preserved-joint distance before and
/// after token refinement.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialEdit {
    pub motion: MotionSequence,
    pub grid: TokenGrid,
    pub joint_dist_pre: f64,
    pub joint_dist_post: f64,
    pub itto: IttoReport,
}

/// Regenerate `motion` with the pose adapter holding the joints marked valid
/// in `constraint`, then refine the tokens against the constraint.
#[allow(clippy::too_many_arguments)]
pub fn edit_spatial(
    models: &Models,
    motion: &MotionSequence,
    constraint: &PoseConstraint,
    bundle: &GuidanceBundle,
    s_total: usize,
    temperature: f32,
    refine: IttoConfig,
    rng: &mut impl Rng,
) -> Result<SpatialEdit> {
    if constraint.frames() != motion.frames() {
        return Err(Error::shape(format!(
            "constraint covers {} frames, motion has {}",
            constraint.frames(),
            motion.frames()
        )));
    }
    if constraint.valid_count() == 0 {
        return Err(Error::NoConstraint);
    }
    let mut bundle = bundle.clone();
    bundle.pose = Some(constraint.clone());
    let source = models.tokenizer.encode(motion)?;
    let n = source.len();
    let ids = vec![models.backbone.config.mask_id(); n];
    let (layer0, _) = decode_tokens(models, &bundle, ids, s_total, temperature, rng)?;
    let all = fill_residual(models, &bundle, &layer0, None, rng)?;
    let mut grid = TokenGrid::new(source.layers(), n, all, motion.frames())?;
    grid.mask = vec![true; n];
    let fps = motion.fps();
    let skel = &models.skeleton;
    let before = models.tokenizer.decode(&grid, fps)?;
    let joint_dist_pre = joint_distance(constraint, &before, skel)?;
    let (grid, report) = itto(models, &grid, constraint, refine)?;
    let out = models.tokenizer.decode(&grid, fps)?;
    let joint_dist_post = joint_distance(constraint, &out, skel)?;
    tracing::info!(joint_dist_pre, joint_dist_post, "spatial edit");
    Ok(SpatialEdit {
        motion: out,
        grid,
        joint_dist_pre,
        joint_dist_post,
        itto: report,
    })
}

fn check_ranges(ranges: &[Range<usize>], frames: usize) -> Result<()> {
    let mut sorted: Vec<&Range<usize>> = ranges.iter().collect();
    sorted.sort_by_key(|r| r.start);
    for r in &sorted {
        if r.start >= r.end || r.end > frames {
            return Err(Error::InvalidRange(format!("{}..{} within {frames} frames", r.start, r.end)));
        }
    }
    if sorted.windows(2).any(|w| w[1].start < w[0].end) {
        return Err(Error::InvalidRange("keep ranges overlap".into()));
    }
    Ok(())
}

/// Keep the tokens touching `keep` (frame ranges) and regenerate the rest.
/// An empty list regenerates everything.
pub fn edit_temporal(
    models: &Models,
    motion: &MotionSequence,
    keep: &[Range<usize>],
    bundle: &GuidanceBundle,
    s_total: usize,
    temperature: f32,
    rng: &mut impl Rng,
) -> Result<MotionSequence> {
    check_ranges(keep, motion.frames())?;
    let source = models.tokenizer.encode(motion)?;
    let n = source.len();
    let kept: Vec<bool> = (0..n)
        .map(|i| keep.iter().any(|r| r.start < (i + 1) * DOWNSAMPLE && i * DOWNSAMPLE < r.end))
        .collect();
    let mask_id = models.backbone.config.mask_id();
    let ids: Vec<usize> = (0..n).map(|i| if kept[i] { source.layer(0)[i] } else { mask_id }).collect();
    let (layer0, _) = decode_tokens(models, bundle, ids, s_total, temperature, rng)?;
    let all = fill_residual(models, bundle, &layer0, Some((&source, &kept)), rng)?;
    let mut grid = TokenGrid::new(source.layers(), n, all, motion.frames())?;
    grid.mask = kept.iter().map(|k| !k).collect();
    models.tokenizer.decode(&grid, motion.fps())
}

/// Frame indices where consecutive segments meet.
pub fn junction_frames(segment_frames: &[usize]) -> Vec<usize> {
    segment_frames
        .iter()
        .scan(0, |acc, f| {
            *acc += f;
            Some(*acc)
        })
        .take(segment_frames.len().saturating_sub(1))
        .collect()
}

fn window_music(a: &GuidanceBundle, b: &GuidanceBundle, na: usize, overlap: usize) -> Option<BeatTrack> {
    let ma = a.music.as_ref()?;
    let mb = b.music.as_ref()?;
    let len = overlap * DOWNSAMPLE;
    let start = (na * DOWNSAMPLE).checked_sub(len)?;
    let pa = ma.slice(start, len.min(ma.frames().saturating_sub(start))).ok();
    let pb = mb.slice(0, len.min(mb.frames())).ok();
    match (pa, pb) {
        (Some(pa), Some(pb)) => BeatTrack::concat(&[pa, pb]).ok(),
        _ => None,
    }
}

/// Generate each segment independently, then regenerate the inner half of a
/// `2 * overlap` token window around every junction conditioned on both
/// neighbours. Output length is the sum of the segment lengths.
#[allow(clippy::too_many_arguments)]
pub fn generate_long(
    models: &Models,
    bundles: &[GuidanceBundle],
    segment_frames: &[usize],
    overlap: usize,
    s_total: usize,
    temperature: f32,
    rng: &mut impl Rng,
) -> Result<MotionSequence> {
    if bundles.is_empty() || bundles.len() != segment_frames.len() {
        return Err(Error::Usage("one frame count per segment is required".into()));
    }
    if overlap == 0 {
        return Err(Error::Parameter("overlap must be at least one token".into()));
    }
    let last = segment_frames.len() - 1;
    for (i, &f) in segment_frames.iter().enumerate() {
        if f.div_ceil(DOWNSAMPLE) < 2 * overlap {
            return Err(Error::SequenceTooShort {
                needed: 2 * overlap * DOWNSAMPLE,
                got: f,
            });
        }
        if i < last && f % DOWNSAMPLE != 0 {
            return Err(Error::Parameter(format!("inner segment of {f} frames is not a multiple of {DOWNSAMPLE}")));
        }
    }
    let mut grids = Vec::with_capacity(bundles.len());
    for (b, &f) in bundles.iter().zip(segment_frames) {
        grids.push(super::parallel_decode(models, b, f, s_total, temperature, rng)?.0);
    }
    let mask_id = models.backbone.config.mask_id();
    let layers = models.tokenizer.config.layers;
    for j in 0..grids.len() - 1 {
        let na = grids[j].len();
        let window = TokenGrid::concat(&[grids[j].slice(na - overlap, overlap)?, grids[j + 1].slice(0, overlap)?])?;
        let lo = overlap - overlap / 2;
        let hi = lo + overlap;
        let keep: Vec<bool> = (0..2 * overlap).map(|i| !(lo..hi).contains(&i)).collect();
        let (a, b) = (&bundles[j], &bundles[j + 1]);
        let bundle = GuidanceBundle {
            genre: a.genre.or(b.genre),
            music: window_music(a, b, na, overlap),
            pose: None,
            weights: a.weights,
            mode: a.mode,
            unconditional: true,
        };
        let ids: Vec<usize> = (0..2 * overlap).map(|i| if keep[i] { window.layer(0)[i] } else { mask_id }).collect();
        let (layer0, _) = decode_tokens(models, &bundle, ids, s_total, temperature, rng)?;
        let all = fill_residual(models, &bundle, &layer0, Some((&window, &keep)), rng)?;
        for q in 0..layers {
            let ids = &all[q * 2 * overlap..(q + 1) * 2 * overlap];
            grids[j].layer_mut(q)[na - overlap..].copy_from_slice(&ids[..overlap]);
            grids[j + 1].layer_mut(q)[..overlap].copy_from_slice(&ids[overlap..]);
        }
    }
    let full = TokenGrid::concat(&grids)?;
    models.tokenizer.decode(&full, crate::motion::FPS)
}
