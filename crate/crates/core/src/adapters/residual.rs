use rand::Rng;

use super::music_condition;
use crate::backbone::{t2m_loss, MaskedConfig, MaskedTransformer, TokenBatch, TokenExample};
use crate::error::{Error, Result};
use crate::motion::MUSIC_DIM;
use crate::nn::Linear;
use crate::seed::{rng_for, tag};
use crate::tensor::{AdamW, AdamWConfig, Bound, Tape, Var, WarmupSchedule};

/// Small transformer predicting the next quantizer layer's ids from the
/// layer below, with pooled music features added to the token inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualHead {
    pub model: MaskedTransformer,
    music: Linear,
}

impl ResidualHead {
    pub fn new(config: MaskedConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut model = MaskedTransformer::new(config, rng)?;
        let music = Linear::new(&mut model.params, "music", MUSIC_DIM, config.width, rng);
        Ok(Self { model, music })
    }

    /// Logits `[B, n, K]` for the next layer; `music` is `[B, n, MUSIC_DIM]`.
    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, batch: &TokenBatch, music: Option<Var>) -> Result<Var> {
        let kv = batch.key_valid(self.model.config.pad_id());
        let mut x = self.model.embed(tape, p, batch)?;
        if let Some(m) = music {
            let w = self.model.config.width;
            let h = self.music.forward(tape, p, m)?;
            let zero = tape.constant_from(&[batch.batch, 1, w], vec![0.0; batch.batch * w])?;
            let h = tape.concat(&[zero, h], 1)?;
            x = tape.add(x, h)?;
        }
        let x = self.model.run_blocks(tape, p, x, &[], kv.as_deref())?;
        self.model.head(tape, p, x, batch.len)
    }

    /// Untaped logits `[n, K]` for one sequence of lower-layer ids.
    pub fn logits(&self, ids: &[usize], genre: Option<usize>, music: Option<&[f32]>) -> Result<Vec<f32>> {
        let n = ids.len();
        let mut tape = Tape::new();
        let p = tape.bind(&self.model.params, false);
        let m = match music {
            Some(m) => Some(tape.constant_from(&[1, n, MUSIC_DIM], music_condition(m, n))?),
            None => None,
        };
        let y = self.forward(&mut tape, &p, &TokenBatch::single(ids.to_vec(), genre), m)?;
        Ok(tape.value(y).to_vec())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualTrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr: f32,
    pub warmup: u64,
    pub genre_drop: f64,
    pub music_drop: f64,
    pub seed: u64,
}

impl Default for ResidualTrainConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            batch: 16,
            lr: 5e-4,
            warmup: 100,
            genre_drop: 0.1,
            music_drop: 0.3,
            seed: 0,
        }
    }
}

/// Trains a [`ResidualHead`] to map layer-0 ids to layer-1 ids.
pub struct ResidualTrainer {
    pub head: ResidualHead,
    pub opt: AdamW,
    pub step: u64,
    pub config: ResidualTrainConfig,
    data: Vec<TokenExample>,
}

impl ResidualTrainer {
    pub fn new(head: ResidualHead, config: ResidualTrainConfig, data: Vec<TokenExample>) -> Result<Self> {
        let first = data.first().ok_or(Error::EmptySequence)?;
        if first.grid.layers() < 2 {
            return Err(Error::Config("residual head needs a tokenizer with at least two layers".into()));
        }
        if data.iter().any(|e| e.len() != first.len()) {
            return Err(Error::Config("residual training needs equal-length examples".into()));
        }
        let opt = AdamW::new(
            AdamWConfig {
                schedule: WarmupSchedule {
                    peak_lr: config.lr,
                    warmup_steps: config.warmup,
                },
                ..Default::default()
            },
            &head.model.params,
        );
        Ok(Self {
            head,
            opt,
            step: 0,
            config,
            data,
        })
    }

    pub fn step(&mut self) -> Result<f32> {
        let c = self.config;
        let mut rng = rng_for(c.seed, &[tag("residual.step"), self.step]);
        let n = self.data[0].len();
        let use_music = !rng.gen_bool(c.music_drop);
        let mut ids = Vec::with_capacity(c.batch * n);
        let mut targets = Vec::with_capacity(c.batch * n);
        let mut genres = Vec::with_capacity(c.batch);
        let mut music = Vec::with_capacity(c.batch * n * MUSIC_DIM);
        for _ in 0..c.batch {
            let ex = &self.data[rng.gen_range(0..self.data.len())];
            ids.extend_from_slice(ex.grid.layer(0));
            targets.extend_from_slice(ex.grid.layer(1));
            genres.push(if rng.gen_bool(c.genre_drop) { None } else { Some(ex.genre) });
            music.extend(music_condition(&ex.music, n));
        }
        let batch = TokenBatch {
            ids,
            batch: c.batch,
            len: n,
            genres,
        };
        let pad = self.head.model.config.pad_id();
        let (loss, grads) = {
            let mut tape = Tape::new();
            let p = tape.bind(&self.head.model.params, true);
            let m = if use_music {
                Some(tape.constant_from(&[c.batch, n, MUSIC_DIM], music)?)
            } else {
                None
            };
            let logits = self.head.forward(&mut tape, &p, &batch, m)?;
            let all = vec![true; targets.len()];
            let loss = t2m_loss(&mut tape, logits, &targets, &all, pad, 1.0)?;
            let lv = tape.scalar(loss);
            let mut g = tape.backward(loss)?;
            (lv, g.for_bound(&p))
        };
        self.opt.step(&mut self.head.model.params, &grads)?;
        self.step += 1;
        Ok(loss)
    }
}
