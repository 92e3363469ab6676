//! Stage-wise training into a checkpoint: tokenizer, then the text-to-motion
//! backbone, then the adapters and residual head against the frozen
//! backbone.

use std::fmt;
use std::str::FromStr;

use super::checkpoint::Checkpoint;
use super::config::Config;
use super::sections::*;
use crate::adapters::{AdapterKind, AdapterTower, AdapterTrainer, ResidualHead, ResidualTrainer};
use crate::backbone::{MaskedTransformer, T2mTrainer, TokenExample};
use crate::error::{Error, Result};
use crate::motion::{Clip, MotionSequence, Skeleton};
use crate::seed::{rng_for, tag};
use crate::tensor::AdamW;
use crate::tokenizer::{Tokenizer, TokenizerTrainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Tokenizer,
    T2m,
    Music,
    Pose,
    Residual,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Tokenizer, Stage::T2m, Stage::Music, Stage::Pose, Stage::Residual];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Tokenizer => "tokenizer",
            Stage::T2m => "t2m",
            Stage::Music => "music",
            Stage::Pose => "pose",
            Stage::Residual => "residual",
        }
    }

    /// Checkpoint section holding the stage's model.
    pub fn section(self) -> &'static str {
        match self {
            Stage::Tokenizer => TOKENIZER,
            Stage::T2m => T2M,
            Stage::Music => MUSIC_ADAPTER,
            Stage::Pose => POSE_ADAPTER,
            Stage::Residual => RESIDUAL_HEAD,
        }
    }

    pub fn state_section(self) -> String {
        format!("{}.state", self.section())
    }

    /// Sections that must exist before the stage may train.
    pub fn prerequisites(self) -> &'static [&'static str] {
        match self {
            Stage::Tokenizer => &[],
            Stage::T2m => &[TOKENIZER],
            Stage::Music | Stage::Pose | Stage::Residual => &[TOKENIZER, T2M],
        }
    }

    /// Stages whose models were trained against this one.
    fn dependents(self) -> &'static [Stage] {
        match self {
            Stage::Tokenizer => &[Stage::T2m, Stage::Music, Stage::Pose, Stage::Residual],
            Stage::T2m => &[Stage::Music, Stage::Pose, Stage::Residual],
            _ => &[],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown stage `{s}`; expected one of tokenizer, t2m, music, pose, residual")))
    }
}

/// Token examples for every clip at offsets `0..offsets`.
pub fn token_examples(tok: &Tokenizer, clips: &[&Clip], offsets: usize) -> Result<Vec<TokenExample>> {
    let mut out = Vec::with_capacity(clips.len() * offsets);
    for c in clips {
        for o in 0..offsets {
            out.push(TokenExample::build(tok, c, o)?);
        }
    }
    // examples must share one token length; drop the ragged tail
    let n = out.iter().map(TokenExample::len).min().unwrap_or(0);
    out.retain(|e| e.len() == n);
    Ok(out)
}

fn save_state(ck: &mut Checkpoint, stage: Stage, opt: &AdamW, step: u64, extra: &[(String, Vec<f32>)]) {
    let mut s = state_section(stage.section(), opt, step, extra);
    s.name = stage.state_section();
    ck.put(s);
}

fn restore(ck: &Checkpoint, stage: Stage, opt: &mut AdamW) -> Result<u64> {
    let s = ck
        .section(&stage.state_section())
        .ok_or_else(|| Error::Checkpoint(format!("no {} state to resume from", stage.name())))?;
    restore_state(s, opt)
}

/// Train `stage` on `clips` into `ck`, calling `log(step, loss)` after
/// every step. With `resume`, the stage's model and optimiser state are
/// taken from `ck` and training continues up to the configured step count.
/// Retraining a stage drops the sections of stages trained against it.
pub fn progressive_train(
    stage: Stage,
    config: &Config,
    clips: &[&Clip],
    skel: &Skeleton,
    ck: &mut Checkpoint,
    resume: bool,
    mut log: impl FnMut(u64, f32),
) -> Result<()> {
    config.validate()?;
    for p in stage.prerequisites() {
        ck.require(p)?;
    }
    if clips.is_empty() {
        return Err(Error::EmptySequence);
    }
    if resume {
        ck.require(stage.section())?;
    } else {
        for d in stage.dependents() {
            ck.remove(d.section());
            ck.remove(&d.state_section());
        }
    }
    let seed = config.seed;
    match stage {
        Stage::Tokenizer => {
            let motions: Vec<&MotionSequence> = clips.iter().map(|c| &c.motion).collect();
            let tc = config.tokenizer_train();
            let mut t = if resume {
                let model = tokenizer_from(ck.require(TOKENIZER)?)?;
                let mut t = TokenizerTrainer::resume(model, tc, &motions)?;
                t.step = restore(ck, stage, &mut t.opt)?;
                let s = ck.require(&stage.state_section())?;
                for (q, u) in t.usage.iter_mut().enumerate() {
                    let saved = s.meta(&format!("usage.{q}"))?;
                    if saved.len() != u.len() {
                        return Err(Error::Checkpoint("codebook usage has the wrong size".into()));
                    }
                    *u = saved.iter().map(|&x| x as u64).collect();
                }
                t
            } else {
                let cfg = crate::tokenizer::TokenizerConfig {
                    feature_dim: skel.feature_dim(),
                    ..config.tokenizer
                };
                TokenizerTrainer::new(cfg, tc, &motions)?
            };
            while t.step < tc.steps {
                let s = t.step;
                log(s, t.step()?);
            }
            let usage: Vec<(String, Vec<f32>)> = t
                .usage
                .iter()
                .enumerate()
                .map(|(q, u)| (format!("usage.{q}"), u.iter().map(|&x| x as f32).collect()))
                .collect();
            ck.put(tokenizer_section(&t.model));
            save_state(ck, stage, &t.opt, t.step, &usage);
        }
        Stage::T2m => {
            let tok = tokenizer_from(ck.require(TOKENIZER)?)?;
            let data = token_examples(&tok, clips, config.offsets)?;
            let tc = config.t2m_train();
            let model = if resume {
                backbone_from(ck.require(T2M)?)?
            } else {
                MaskedTransformer::new(config.masked_config(), &mut rng_for(seed, &[tag("t2m.init")]))?
            };
            let mut t = T2mTrainer::new(model, tc, data)?;
            if resume {
                t.step = restore(ck, stage, &mut t.opt)?;
            }
            while t.step < tc.steps {
                let s = t.step;
                log(s, t.step()?);
            }
            ck.put(backbone_section(&t.model));
            save_state(ck, stage, &t.opt, t.step, &[]);
        }
        Stage::Music | Stage::Pose => {
            let kind = if stage == Stage::Music { AdapterKind::Music } else { AdapterKind::Pose };
            let tok = tokenizer_from(ck.require(TOKENIZER)?)?;
            let backbone = backbone_from(ck.require(T2M)?)?;
            let data = token_examples(&tok, clips, config.offsets)?;
            let tc = if stage == Stage::Music { config.music_train() } else { config.pose_train() };
            let adapter = if resume {
                adapter_from(ck.require(stage.section())?, kind, &backbone, skel.joints())?
            } else {
                AdapterTower::new(kind, &backbone, skel.joints(), &mut rng_for(seed, &[tag(kind.name()), tag("init")]))
            };
            let mut t = AdapterTrainer::new(adapter, &backbone, &tok, skel.clone(), tc, data)?;
            if resume {
                t.step = restore(ck, stage, &mut t.opt)?;
            }
            while t.step < tc.steps {
                let s = t.step;
                log(s, t.step()?);
            }
            let (adapter, opt, step) = (t.adapter, t.opt, t.step);
            ck.put(adapter_section(&adapter));
            save_state(ck, stage, &opt, step, &[]);
        }
        Stage::Residual => {
            let tok = tokenizer_from(ck.require(TOKENIZER)?)?;
            let data = token_examples(&tok, clips, config.offsets)?;
            let tc = config.residual_train();
            let head = if resume {
                residual_from(ck.require(RESIDUAL_HEAD)?)?
            } else {
                ResidualHead::new(config.masked_config(), &mut rng_for(seed, &[tag("residual.init")]))?
            };
            let mut t = ResidualTrainer::new(head, tc, data)?;
            if resume {
                t.step = restore(ck, stage, &mut t.opt)?;
            }
            while t.step < tc.steps {
                let s = t.step;
                log(s, t.step()?);
            }
            ck.put(residual_section(&t.head));
            save_state(ck, stage, &t.opt, t.step, &[]);
        }
    }
    Ok(())
}
