//! Conversion between models and checkpoint sections.

use super::checkpoint::{Checkpoint, Section};
use crate::adapters::{AdapterKind, AdapterTower, ResidualHead};
use crate::backbone::{MaskedConfig, MaskedTransformer};
use crate::error::{Error, Result};
use crate::motion::Skeleton;
use crate::sampler::Models;
use crate::seed::rng_for;
use crate::tensor::{AdamW, Tensor};
use crate::tokenizer::{FeatureStats, Tokenizer, TokenizerConfig};

pub const TOKENIZER: &str = "tokenizer";
pub const T2M: &str = "t2m";
pub const MUSIC_ADAPTER: &str = "music_adapter";
pub const POSE_ADAPTER: &str = "pose_adapter";
pub const RESIDUAL_HEAD: &str = "residual_head";

fn as_usize(v: f32, what: &str) -> Result<usize> {
    if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::Checkpoint(format!("{what} is not a size: {v}")));
    }
    Ok(v as usize)
}

fn load_params(target: &mut crate::tensor::ParamSet, s: &Section) -> Result<()> {
    target.load_from(&s.params()).map_err(|e| Error::Checkpoint(format!("section {}: {e}", s.name)))
}

pub fn tokenizer_section(t: &Tokenizer) -> Section {
    let c = t.config;
    let mut s = Section::with_params(TOKENIZER, &t.params);
    s.push_meta(
        "config",
        vec![
            c.feature_dim as f32,
            c.hidden as f32,
            c.code_dim as f32,
            c.codebook_size as f32,
            c.layers as f32,
            c.beta,
        ],
    );
    s.push_meta("stats_mean", t.stats.mean.clone());
    s.push_meta("stats_std", t.stats.std.clone());
    s.push_meta("trained", vec![t.trained as u8 as f32]);
    s
}

pub fn tokenizer_from(s: &Section) -> Result<Tokenizer> {
    let m = s.meta("config")?;
    if m.len() != 6 {
        return Err(Error::Checkpoint("tokenizer config has the wrong length".into()));
    }
    let config = TokenizerConfig {
        feature_dim: as_usize(m[0], "feature_dim")?,
        hidden: as_usize(m[1], "hidden")?,
        code_dim: as_usize(m[2], "code_dim")?,
        codebook_size: as_usize(m[3], "codebook_size")?,
        layers: as_usize(m[4], "layers")?,
        beta: m[5],
    };
    let mut t = Tokenizer::new(config, &mut rng_for(0, &[]))?;
    load_params(&mut t.params, s)?;
    t.stats = FeatureStats {
        mean: s.meta("stats_mean")?.to_vec(),
        std: s.meta("stats_std")?.to_vec(),
    };
    if t.stats.mean.len() != config.feature_dim || t.stats.std.len() != config.feature_dim {
        return Err(Error::Checkpoint("tokenizer statistics have the wrong width".into()));
    }
    t.trained = s.meta("trained")?.first() == Some(&1.0);
    Ok(t)
}

fn masked_meta(c: &MaskedConfig) -> Vec<f32> {
    [c.codebook_size, c.width, c.layers, c.heads, c.ffn, c.max_len, c.genres]
        .iter()
        .map(|&v| v as f32)
        .collect()
}

fn masked_config(s: &Section) -> Result<MaskedConfig> {
    let m = s.meta("config")?;
    if m.len() != 7 {
        return Err(Error::Checkpoint(format!("{} config has the wrong length", s.name)));
    }
    Ok(MaskedConfig {
        codebook_size: as_usize(m[0], "codebook_size")?,
        width: as_usize(m[1], "width")?,
        layers: as_usize(m[2], "layers")?,
        heads: as_usize(m[3], "heads")?,
        ffn: as_usize(m[4], "ffn")?,
        max_len: as_usize(m[5], "max_len")?,
        genres: as_usize(m[6], "genres")?,
    })
}

pub fn backbone_section(m: &MaskedTransformer) -> Section {
    let mut s = Section::with_params(T2M, &m.params);
    s.push_meta("config", masked_meta(&m.config));
    s
}

pub fn backbone_from(s: &Section) -> Result<MaskedTransformer> {
    let mut m = MaskedTransformer::new(masked_config(s)?, &mut rng_for(0, &[]))?;
    load_params(&mut m.params, s)?;
    Ok(m)
}

pub fn adapter_section(a: &AdapterTower) -> Section {
    let mut s = Section::with_params(a.kind.name(), &a.tower.params);
    s.push_meta("config", masked_meta(&a.tower.config));
    s
}

pub fn adapter_from(s: &Section, kind: AdapterKind, backbone: &MaskedTransformer, joints: usize) -> Result<AdapterTower> {
    if masked_config(s)? != backbone.config {
        return Err(Error::Checkpoint(format!("{} was trained against a different backbone", s.name)));
    }
    let mut a = AdapterTower::new(kind, backbone, joints, &mut rng_for(0, &[]));
    load_params(&mut a.tower.params, s)?;
    Ok(a)
}

pub fn residual_section(h: &ResidualHead) -> Section {
    let mut s = Section::with_params(RESIDUAL_HEAD, &h.model.params);
    s.push_meta("config", masked_meta(&h.model.config));
    s
}

pub fn residual_from(s: &Section) -> Result<ResidualHead> {
    let mut h = ResidualHead::new(masked_config(s)?, &mut rng_for(0, &[]))?;
    load_params(&mut h.model.params, s)?;
    Ok(h)
}

/// Optimiser moments and step counter of stage `stage`, plus any extra
/// named vectors.
pub fn state_section(stage: &str, opt: &AdamW, step: u64, extra: &[(String, Vec<f32>)]) -> Section {
    let mut s = Section::new(format!("{stage}.state"));
    let lo = (step & 0xffff) as f32;
    let hi = (step >> 16) as f32;
    s.push_meta("step", vec![lo, hi]);
    for (i, m) in opt.moments().enumerate() {
        s.push(format!("moment.{i}"), Tensor::new(vec![m.len()], m.to_vec()).expect("1-D"));
    }
    for (name, v) in extra {
        s.push_meta(name, v.clone());
    }
    s
}

/// Restore optimiser moments; returns the stored step.
pub fn restore_state(s: &Section, opt: &mut AdamW) -> Result<u64> {
    let st = s.meta("step")?;
    if st.len() != 2 {
        return Err(Error::Checkpoint("bad step record".into()));
    }
    let step = as_usize(st[0], "step")? as u64 | ((as_usize(st[1], "step")? as u64) << 16);
    let moments: Vec<Vec<f32>> = s
        .tensors
        .iter()
        .filter(|(n, _)| n.starts_with("moment."))
        .map(|(_, t)| t.data().to_vec())
        .collect();
    opt.restore(step, moments).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(step)
}

/// Every trained network found in `ck`. Tokenizer and backbone are required.
pub fn models_from(ck: &Checkpoint, skeleton: Skeleton) -> Result<Models> {
    let tokenizer = tokenizer_from(ck.require(TOKENIZER)?)?;
    let backbone = backbone_from(ck.require(T2M)?)?;
    let j = skeleton.joints();
    let music = match ck.section(MUSIC_ADAPTER) {
        Some(s) => Some(adapter_from(s, AdapterKind::Music, &backbone, j)?),
        None => None,
    };
    let pose = match ck.section(POSE_ADAPTER) {
        Some(s) => Some(adapter_from(s, AdapterKind::Pose, &backbone, j)?),
        None => None,
    };
    let residual = match ck.section(RESIDUAL_HEAD) {
        Some(s) => Some(residual_from(s)?),
        None => None,
    };
    Ok(Models {
        skeleton,
        tokenizer,
        backbone,
        music,
        pose,
        residual,
    })
}
