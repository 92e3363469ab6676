use rand::Rng;

use super::{t2m_loss, training_mask, MaskedTransformer, TokenBatch};
use crate::error::{Error, Result};
use crate::motion::{BeatTrack, Clip, MotionSequence, MUSIC_DIM};
use crate::seed::{rng_for, tag};
use crate::tensor::{AdamW, AdamWConfig, Tape, WarmupSchedule};
use crate::tokenizer::{TokenGrid, Tokenizer, DOWNSAMPLE};

/// One training sequence in token space together with the signals the
/// adapters condition on.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenExample {
    pub genre: usize,
    pub grid: TokenGrid,
    /// Motion padded to `4 n` frames.
    pub motion: MotionSequence,
    /// Per-frame music features, `4 n x MUSIC_DIM`.
    pub music: Vec<f32>,
}

impl TokenExample {
    /// Encode `clip` starting `offset` frames in; the tail is padded with the
    /// last frame up to a whole token.
    pub fn build(tok: &Tokenizer, clip: &Clip, offset: usize) -> Result<Self> {
        let frames = clip.motion.frames();
        if offset >= frames {
            return Err(Error::InvalidRange(format!("offset {offset} beyond {frames} frames")));
        }
        let motion = clip.motion.slice(offset, frames - offset)?;
        let grid = tok.encode(&motion)?;
        let music = pad_rows(&clip.beats.slice(offset, frames - offset)?.features().to_vec(), MUSIC_DIM, grid.len() * DOWNSAMPLE);
        let motion = MotionSequence::new(
            motion.fps(),
            motion.dim(),
            pad_rows(motion.data(), motion.dim(), grid.len() * DOWNSAMPLE),
        )?;
        Ok(Self {
            genre: clip.genre,
            grid,
            motion,
            music,
        })
    }

    pub fn from_parts(tok: &Tokenizer, genre: usize, motion: &MotionSequence, beats: &BeatTrack) -> Result<Self> {
        let grid = tok.encode(motion)?;
        let n = grid.len() * DOWNSAMPLE;
        Ok(Self {
            genre,
            music: pad_rows(beats.features(), MUSIC_DIM, n),
            motion: MotionSequence::new(motion.fps(), motion.dim(), pad_rows(motion.data(), motion.dim(), n))?,
            grid,
        })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// Repeat the last row (or cut) so `data` holds exactly `rows` rows of `width`.
pub(crate) fn pad_rows(data: &[f32], width: usize, rows: usize) -> Vec<f32> {
    let mut out: Vec<f32> = data.iter().copied().take(rows * width).collect();
    let last = if data.len() >= width { data[data.len() - width..].to_vec() } else { vec![0.0; width] };
    while out.len() < rows * width {
        out.extend_from_slice(&last);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct T2mTrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr: f32,
    pub warmup: u64,
    pub cond_drop: f64,
    pub lambda_unmask: f32,
    pub seed: u64,
}

impl Default for T2mTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 16,
            lr: 5e-4,
            warmup: 200,
            cond_drop: 0.1,
            lambda_unmask: 1.0,
            seed: 0,
        }
    }
}

/// Stack the layer-0 ids of several examples, right-padding with `pad`.
pub(crate) fn stack_ids(rows: &[Vec<usize>], pad: usize) -> (Vec<usize>, usize) {
    let len = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut ids = Vec::with_capacity(rows.len() * len);
    for r in rows {
        ids.extend_from_slice(r);
        ids.extend(std::iter::repeat(pad).take(len - r.len()));
    }
    (ids, len)
}

/// Resumable masked-token training of the backbone.
pub struct T2mTrainer {
    pub model: MaskedTransformer,
    pub opt: AdamW,
    pub step: u64,
    pub config: T2mTrainConfig,
    data: Vec<TokenExample>,
}

impl T2mTrainer {
    pub fn new(model: MaskedTransformer, config: T2mTrainConfig, data: Vec<TokenExample>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptySequence);
        }
        if config.batch == 0 {
            return Err(Error::Config("t2m batch must be positive".into()));
        }
        let opt = AdamW::new(
            AdamWConfig {
                schedule: WarmupSchedule {
                    peak_lr: config.lr,
                    warmup_steps: config.warmup,
                },
                ..Default::default()
            },
            &model.params,
        );
        Ok(Self {
            model,
            opt,
            step: 0,
            config,
            data,
        })
    }

    pub fn step(&mut self) -> Result<f32> {
        let c = self.config;
        let mc = self.model.config;
        let mut rng = rng_for(c.seed, &[tag("t2m.step"), self.step]);
        let mut inputs = Vec::with_capacity(c.batch);
        let mut targets = Vec::with_capacity(c.batch);
        let mut masks = Vec::with_capacity(c.batch);
        let mut genres = Vec::with_capacity(c.batch);
        for _ in 0..c.batch {
            let ex = &self.data[rng.gen_range(0..self.data.len())];
            let ids = ex.grid.layer(0).to_vec();
            let (corrupt, mask) = training_mask(&ids, mc.mask_id(), &mut rng)?;
            genres.push(if rng.gen_bool(c.cond_drop) { None } else { Some(ex.genre) });
            inputs.push(corrupt);
            targets.push(ids);
            masks.push(mask);
        }
        let (ids, len) = stack_ids(&inputs, mc.pad_id());
        let (tg, _) = stack_ids(&targets, mc.pad_id());
        let mask: Vec<bool> = masks
            .iter()
            .flat_map(|m| m.iter().copied().chain(std::iter::repeat(false)).take(len))
            .collect();
        let batch = TokenBatch {
            ids,
            batch: c.batch,
            len,
            genres,
        };
        let (loss, grads) = {
            let mut tape = Tape::new();
            let p = tape.bind(&self.model.params, true);
            let logits = self.model.forward(&mut tape, &p, &batch, &[])?;
            let loss = t2m_loss(&mut tape, logits, &tg, &mask, mc.pad_id(), c.lambda_unmask)?;
            let lv = tape.scalar(loss);
            let mut g = tape.backward(loss)?;
            (lv, g.for_bound(&p))
        };
        self.opt.step(&mut self.model.params, &grads)?;
        self.step += 1;
        Ok(loss)
    }
}

/// Mean cross-entropy on masked positions only, with masks drawn from `seed`.
pub fn heldout_masked_ce(model: &MaskedTransformer, data: &[TokenExample], seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mc = model.config;
    let mut total = 0.0;
    for (i, ex) in data.iter().enumerate() {
        let mut rng = rng_for(seed, &[tag("t2m.heldout"), i as u64]);
        let ids = ex.grid.layer(0).to_vec();
        let (corrupt, mask) = training_mask(&ids, mc.mask_id(), &mut rng)?;
        let mut tape = Tape::new();
        let p = tape.bind(&model.params, false);
        let logits = model.forward(&mut tape, &p, &TokenBatch::single(corrupt, Some(ex.genre)), &[])?;
        let loss = t2m_loss(&mut tape, logits, &ids, &mask, mc.pad_id(), 0.0)?;
        total += tape.scalar(loss) as f64;
    }
    Ok(total / data.len() as f64)
}
