use rand::Rng;

use super::{codebook_reset, tokenizer_loss, FeatureStats, Tokenizer, TokenizerConfig};
use crate::error::{Error, Result};
use crate::motion::{mpjpe, MotionSequence, Skeleton};
use crate::seed::{rng_for, tag};
use crate::tensor::{AdamW, AdamWConfig, Tape, WarmupSchedule};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TokenizerTrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub window: usize,
    pub lr: f32,
    pub warmup: u64,
    pub reset_every: u64,
    pub seed: u64,
}

impl Default for TokenizerTrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch: 16,
            window: 64,
            lr: 1e-3,
            warmup: 200,
            reset_every: 100,
            seed: 0,
        }
    }
}

/// Resumable tokenizer optimisation. All randomness of step `s` comes from
/// `(seed, s)`, so a run restored at step `s` continues bit-identically.
pub struct TokenizerTrainer {
    pub model: Tokenizer,
    pub opt: AdamW,
    pub step: u64,
    /// Per-layer code usage since the last reset.
    pub usage: Vec<Vec<u64>>,
    pub config: TokenizerTrainConfig,
    data: Vec<Vec<f32>>,
}

impl TokenizerTrainer {
    pub fn new(model_cfg: TokenizerConfig, config: TokenizerTrainConfig, clips: &[&MotionSequence]) -> Result<Self> {
        let mut model = Tokenizer::new(model_cfg, &mut rng_for(config.seed, &[tag("tokenizer.init")]))?;
        model.stats = FeatureStats::fit(clips)?;
        Self::resume(model, config, clips)
    }

    /// Continue from an existing model; the optimiser starts fresh unless
    /// restored by the caller.
    pub fn resume(model: Tokenizer, config: TokenizerTrainConfig, clips: &[&MotionSequence]) -> Result<Self> {
        if config.batch == 0 || config.window == 0 || config.window % super::DOWNSAMPLE != 0 {
            return Err(Error::Config("tokenizer batch and window must be positive, window a multiple of 4".into()));
        }
        if let Some(c) = clips.iter().find(|c| c.frames() < config.window) {
            return Err(Error::SequenceTooShort {
                needed: config.window,
                got: c.frames(),
            });
        }
        if clips.is_empty() {
            return Err(Error::EmptySequence);
        }
        let data = clips.iter().map(|c| model.stats.normalize(c.data())).collect();
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
        let usage = vec![vec![0; model.config.codebook_size]; model.config.layers];
        Ok(Self {
            model,
            opt,
            step: 0,
            usage,
            config,
            data,
        })
    }

    fn batch(&self, rng: &mut impl Rng) -> Vec<f32> {
        let (w, d) = (self.config.window, self.model.config.feature_dim);
        let mut x = Vec::with_capacity(self.config.batch * w * d);
        for _ in 0..self.config.batch {
            let clip = &self.data[rng.gen_range(0..self.data.len())];
            let frames = clip.len() / d;
            let start = rng.gen_range(0..=frames - w);
            x.extend_from_slice(&clip[start * d..(start + w) * d]);
        }
        x
    }

    fn latents(&self, x: &[f32]) -> Result<Vec<f32>> {
        let c = self.config;
        let mut tape = Tape::new();
        let p = tape.bind(&self.model.params, false);
        let xv = tape.constant_from(&[c.batch, c.window, self.model.config.feature_dim], x.to_vec())?;
        let z = self.model.encoder(&mut tape, &p, xv)?;
        Ok(tape.value(z).to_vec())
    }

    /// Candidate latents for layer `q`: the residual left by layers `< q`.
    fn residual_pool(&self, z: &[f32], q: usize) -> Result<Vec<f32>> {
        let d = self.model.config.code_dim;
        let mut r = z.to_vec();
        let n = z.len() / d;
        for layer in 0..q {
            let cb = self.model.codebook(layer);
            for i in 0..n {
                let row = &mut r[i * d..(i + 1) * d];
                let k = super::nearest_code(row, cb, d);
                for c in 0..d {
                    row[c] -= cb[k * d + c];
                }
            }
        }
        Ok(r)
    }

    /// One optimisation step; returns the loss.
    pub fn step(&mut self) -> Result<f32> {
        let c = self.config;
        let mut rng = rng_for(c.seed, &[tag("tokenizer.step"), self.step]);
        let x = self.batch(&mut rng);
        let (dz, k) = (self.model.config.code_dim, self.model.config.codebook_size);
        if self.step == 0 {
            let z = self.latents(&x)?;
            for q in 0..self.model.config.layers {
                let pool = self.residual_pool(&z, q)?;
                let cb = self.model.codebook_mut(q);
                codebook_reset(cb, &vec![0; k], &pool, dz, &mut rng);
            }
        }
        let (loss, grads, zvals, indices) = {
            let mut tape = Tape::new();
            let p = tape.bind(&self.model.params, true);
            let xv = tape.constant_from(&[c.batch, c.window, self.model.config.feature_dim], x)?;
            let z = self.model.encoder(&mut tape, &p, xv)?;
            let zvals = tape.value(z).to_vec();
            let q = self.model.quantize_latents(&zvals)?;
            let n = zvals.len() / dz;
            let zbar = self.model.gather_codes(&mut tape, &p, &q.indices, n)?;
            let zshape = tape.shape(z).to_vec();
            let zbar = tape.reshape(zbar, &zshape)?;
            let st = tape.straight_through(q.quantized, z)?;
            let xhat = self.model.decoder(&mut tape, &p, st)?;
            let loss = tokenizer_loss(&mut tape, xv, xhat, z, zbar, self.model.config.beta)?;
            let lv = tape.scalar(loss);
            let mut g = tape.backward(loss)?;
            (lv, g.for_bound(&p), zvals, q.indices)
        };
        self.opt.step(&mut self.model.params, &grads)?;
        let n = zvals.len() / dz;
        for q in 0..self.model.config.layers {
            for &i in &indices[q * n..(q + 1) * n] {
                self.usage[q][i] += 1;
            }
        }
        self.step += 1;
        if c.reset_every > 0 && self.step % c.reset_every == 0 {
            for q in 0..self.model.config.layers {
                let pool = self.residual_pool(&zvals, q)?;
                let usage = std::mem::replace(&mut self.usage[q], vec![0; k]);
                let cb = self.model.codebook_mut(q);
                let replaced = codebook_reset(cb, &usage, &pool, dz, &mut rng);
                if replaced > 0 {
                    tracing::debug!(layer = q, replaced, "revived dead codes");
                }
            }
        }
        self.model.trained = true;
        Ok(loss)
    }
}

/// Mean per-clip MPJPE of `decode(encode(x))` against `x`.
pub fn round_trip_mpjpe(tok: &Tokenizer, clips: &[&MotionSequence], skel: &Skeleton) -> Result<f32> {
    if clips.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut total = 0.0;
    for c in clips {
        let rec = tok.decode(&tok.encode(c)?, c.fps())?;
        total += mpjpe(c, &rec, skel)?;
    }
    Ok(total / clips.len() as f32)
}
