use std::fmt::Write as _;

use rand::Rng;

use super::{GuidanceBundle, Models};
use crate::backbone::remask_count;
use crate::error::{Error, Result};
use crate::tokenizer::{TokenGrid, DOWNSAMPLE};

/// One decoding iteration: the confidence seen at every position and the
/// positions committed in this step.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeStep {
    pub step: usize,
    pub confidence: Vec<f32>,
    pub committed: Vec<usize>,
}

/// Per-step record of a parallel decode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DecodeTrace {
    pub len: usize,
    pub steps: Vec<DecodeStep>,
}

impl DecodeTrace {
    /// Positions still masked after each step, given `initially` masked.
    pub fn masked_counts(&self, initially: usize) -> Vec<usize> {
        let mut left = initially;
        self.steps
            .iter()
            .map(|s| {
                left -= s.committed.len();
                left
            })
            .collect()
    }

    /// `step,position,confidence,committed` rows, one per position per step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,position,confidence,committed\n");
        for s in &self.steps {
            for (pos, c) in s.confidence.iter().enumerate() {
                let committed = s.committed.contains(&pos) as u8;
                let _ = writeln!(out, "{},{pos},{c:.6},{committed}", s.step);
            }
        }
        out
    }
}

/// Draw from `softmax(logits / temperature)`; returns the index and its
/// probability.
pub fn sample_categorical(logits: &[f32], temperature: f32, rng: &mut impl Rng) -> Result<(usize, f32)> {
    if !(temperature > 0.0) {
        return Err(Error::Parameter(format!("temperature must be positive, got {temperature}")));
    }
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN logit".into()));
    }
    let t = temperature as f64;
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let w: Vec<f64> = logits.iter().map(|&v| ((v as f64 - max) / t).exp()).collect();
    let total: f64 = w.iter().sum();
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut pick = w.len() - 1;
    for (i, &wi) in w.iter().enumerate() {
        acc += wi;
        if u < acc {
            pick = i;
            break;
        }
    }
    Ok((pick, (w[pick] / total) as f32))
}

/// Fill every `[MASK]` in `ids` over `s_total` steps. After step `t` exactly
/// `remask_count(M, t, s_total)` positions stay masked, where `M` is the
/// initial masked count; committed tokens are never revisited.
pub fn decode_tokens(
    models: &Models,
    bundle: &GuidanceBundle,
    mut ids: Vec<usize>,
    s_total: usize,
    temperature: f32,
    rng: &mut impl Rng,
) -> Result<(Vec<usize>, DecodeTrace)> {
    if s_total == 0 {
        return Err(Error::Parameter("decoding needs at least one step".into()));
    }
    let mc = models.backbone.config;
    let (k, mask_id) = (mc.codebook_size, mc.mask_id());
    let n = ids.len();
    let initial = ids.iter().filter(|&&i| i == mask_id).count();
    let mut conf = vec![1.0f32; n];
    let mut trace = DecodeTrace { len: n, steps: Vec::new() };
    for t in 0..s_total {
        let masked: Vec<usize> = (0..n).filter(|&i| ids[i] == mask_id).collect();
        if masked.is_empty() {
            break;
        }
        let logits = models.guided_logits(bundle, &ids)?;
        let mut draws = Vec::with_capacity(masked.len());
        for &pos in &masked {
            let (tok, p) = sample_categorical(&logits[pos * k..(pos + 1) * k], temperature, rng)?;
            conf[pos] = p;
            draws.push((pos, tok, p));
        }
        let keep_masked = remask_count(initial, t + 1, s_total);
        let commit = masked.len().saturating_sub(keep_masked);
        draws.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        let mut committed: Vec<usize> = draws[..commit].iter().map(|d| d.0).collect();
        for &(pos, tok, _) in &draws[..commit] {
            ids[pos] = tok;
        }
        committed.sort_unstable();
        trace.steps.push(DecodeStep {
            step: t,
            confidence: conf.clone(),
            committed,
        });
    }
    debug_assert!(!ids.contains(&mask_id));
    Ok((ids, trace))
}

/// Ids of every layer above 0 from the residual head, sampled at a near-zero
/// temperature. `fixed` overrides positions whose ids are already known.
pub(crate) fn fill_residual(
    models: &Models,
    bundle: &GuidanceBundle,
    layer0: &[usize],
    fixed: Option<(&TokenGrid, &[bool])>,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let layers = models.tokenizer.config.layers;
    let n = layer0.len();
    let k = models.backbone.config.codebook_size;
    let mut out = layer0.to_vec();
    if layers == 1 {
        return Ok(out);
    }
    let head = models
        .residual
        .as_ref()
        .ok_or_else(|| Error::Prerequisite("a residual head is needed for multi-layer tokenizers".into()))?;
    let music = bundle.music.as_ref().map(|m| Models::music_rows(m, n));
    let logits = head.logits(layer0, bundle.genre, music.as_deref())?;
    if layers > 2 {
        return Err(Error::Config("the residual head predicts a single extra layer".into()));
    }
    for i in 0..n {
        let keep = fixed.is_some_and(|(_, keep)| keep[i]);
        out.push(match fixed {
            Some((grid, _)) if keep => grid.layer(1)[i],
            _ => sample_categorical(&logits[i * k..(i + 1) * k], 1e-8, rng)?.0,
        });
    }
    Ok(out)
}

/// Generate a grid for `frames` frames from a fully masked start.
pub fn parallel_decode(
    models: &Models,
    bundle: &GuidanceBundle,
    frames: usize,
    s_total: usize,
    temperature: f32,
    rng: &mut impl Rng,
) -> Result<(TokenGrid, DecodeTrace)> {
    bundle.validate()?;
    if frames == 0 {
        return Err(Error::EmptySequence);
    }
    let n = frames.div_ceil(DOWNSAMPLE);
    let ids = vec![models.backbone.config.mask_id(); n];
    let (layer0, trace) = decode_tokens(models, bundle, ids, s_total, temperature, rng)?;
    let all = fill_residual(models, bundle, &layer0, None, rng)?;
    let grid = TokenGrid::new(models.tokenizer.config.layers, n, all, frames)?;
    Ok((grid, trace))
}
