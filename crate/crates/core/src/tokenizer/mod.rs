//! Residual VQ-VAE between pose-feature sequences and discrete token grids.
//!
//! The encoder is a temporal conv stack that downsamples by [`DOWNSAMPLE`];
//! the decoder mirrors it with nearest-neighbour upsampling. Latents are
//! quantized by a stack of residual codebooks.

mod quantize;
mod train;

pub use quantize::{nearest_code, quantize, Quantized, TokenGrid};
pub use train::{round_trip_mpjpe, TokenizerTrainConfig, TokenizerTrainer};

use rand::Rng;

use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::nn::Conv1d;
use crate::tensor::{Bound, ParamSet, Tape, Var};

/// Temporal reduction between frames and tokens.
pub const DOWNSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TokenizerConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub code_dim: usize,
    pub codebook_size: usize,
    pub layers: usize,
    pub beta: f32,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            feature_dim: 41,
            hidden: 128,
            code_dim: 64,
            codebook_size: 128,
            layers: 2,
            beta: 0.25,
        }
    }
}

/// Per-feature mean and standard deviation used to normalise network inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl FeatureStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit(seqs: &[&MotionSequence]) -> Result<Self> {
        let first = seqs.first().ok_or(Error::EmptySequence)?;
        let d = first.dim();
        let mut sum = vec![0.0f64; d];
        let mut sq = vec![0.0f64; d];
        let mut n = 0usize;
        for s in seqs {
            if s.dim() != d {
                return Err(Error::shape("sequences differ in feature width"));
            }
            for row in s.data().chunks_exact(d) {
                for (c, &v) in row.iter().enumerate() {
                    sum[c] += v as f64;
                    sq[c] += (v as f64) * (v as f64);
                }
            }
            n += s.frames();
        }
        if n == 0 {
            return Err(Error::EmptySequence);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / n as f64 - m * m).max(0.0).sqrt().max(1e-2)) as f32)
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    pub fn normalize(&self, data: &[f32]) -> Vec<f32> {
        let d = self.mean.len();
        data.iter()
            .enumerate()
            .map(|(i, &v)| (v - self.mean[i % d]) / self.std[i % d])
            .collect()
    }

    pub fn denormalize(&self, data: &[f32]) -> Vec<f32> {
        let d = self.mean.len();
        data.iter()
            .enumerate()
            .map(|(i, &v)| v * self.std[i % d] + self.mean[i % d])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    enc: [Conv1d; 5],
    dec: [Conv1d; 5],
    codebooks: Vec<usize>,
}

/// Encoder, decoder, codebooks and normalisation statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Tokenizer {
    pub config: TokenizerConfig,
    pub params: ParamSet,
    pub stats: FeatureStats,
    /// Cleared on a freshly initialised model; encode/decode then warn.
    pub trained: bool,
    layout: Layout,
}

impl Tokenizer {
    pub fn new(config: TokenizerConfig, rng: &mut impl Rng) -> Result<Self> {
        let c = config;
        if c.codebook_size == 0 {
            return Err(Error::EmptyCodebook);
        }
        if c.layers == 0 || c.hidden == 0 || c.code_dim == 0 || c.beta < 0.0 {
            return Err(Error::Config("tokenizer sizes must be positive".into()));
        }
        let mut p = ParamSet::new();
        let (d, h, z) = (c.feature_dim, c.hidden, c.code_dim);
        let enc = [
            Conv1d::new(&mut p, "enc.0", d, h, 3, 1, 1, rng),
            Conv1d::new(&mut p, "enc.1", h, h, 4, 2, 1, rng),
            Conv1d::new(&mut p, "enc.2", h, h, 4, 2, 1, rng),
            Conv1d::new(&mut p, "enc.3", h, h, 3, 1, 1, rng),
            Conv1d::new(&mut p, "enc.4", h, z, 3, 1, 1, rng),
        ];
        let dec = [
            Conv1d::new(&mut p, "dec.0", z, h, 3, 1, 1, rng),
            Conv1d::new(&mut p, "dec.1", h, h, 3, 1, 1, rng),
            Conv1d::new(&mut p, "dec.2", h, h, 3, 1, 1, rng),
            Conv1d::new(&mut p, "dec.3", h, h, 3, 1, 1, rng),
            Conv1d::new(&mut p, "dec.4", h, d, 3, 1, 1, rng),
        ];
        let codebooks = (0..c.layers)
            .map(|q| p.normal(format!("codebook.{q}"), &[c.codebook_size, z], 1.0, rng))
            .collect();
        Ok(Self {
            config,
            params: p,
            stats: FeatureStats::identity(d),
            trained: false,
            layout: Layout { enc, dec, codebooks },
        })
    }

    pub fn codebook(&self, q: usize) -> &[f32] {
        self.params.get(self.layout.codebooks[q]).data()
    }

    pub fn codebook_mut(&mut self, q: usize) -> &mut [f32] {
        self.params.get_mut(self.layout.codebooks[q]).data_mut()
    }

    pub(crate) fn codebook_param(&self, q: usize) -> usize {
        self.layout.codebooks[q]
    }

    /// `[b, frames, D]` normalised features to `[b, frames/4, d]` latents.
    pub fn encoder(&self, tape: &mut Tape<'_>, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, conv) in self.layout.enc.iter().enumerate() {
            h = conv.forward(tape, p, h)?;
            if i + 1 < self.layout.enc.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// `[b, n, d]` latents to `[b, 4n, D]` normalised features.
    pub fn decoder(&self, tape: &mut Tape<'_>, p: &Bound, z: Var) -> Result<Var> {
        let dec = &self.layout.dec;
        let mut h = dec[0].forward(tape, p, z)?;
        h = tape.relu(h);
        for conv in &dec[1..3] {
            h = tape.upsample(h, 2)?;
            h = conv.forward(tape, p, h)?;
            h = tape.relu(h);
        }
        h = dec[3].forward(tape, p, h)?;
        h = tape.relu(h);
        dec[4].forward(tape, p, h)
    }

    /// Sum of the chosen codes of every layer as a differentiable node; the
    /// gradient reaches the codebook rows that were picked.
    pub fn gather_codes(&self, tape: &mut Tape<'_>, p: &Bound, indices: &[usize], n: usize) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for q in 0..self.config.layers {
            let e = tape.embedding(p[self.layout.codebooks[q]], &indices[q * n..(q + 1) * n])?;
            acc = Some(match acc {
                Some(a) => tape.add(a, e)?,
                None => e,
            });
        }
        acc.ok_or(Error::EmptyCodebook)
    }

    pub fn quantize_latents(&self, z: &[f32]) -> Result<Quantized> {
        let books: Vec<&[f32]> = (0..self.config.layers).map(|q| self.codebook(q)).collect();
        quantize(z, self.config.code_dim, &books)
    }

    fn warn_untrained(&self) {
        if !self.trained {
            tracing::warn!("tokenizer has not been trained; codes are meaningless");
        }
    }

    fn padded_input(&self, seq: &MotionSequence) -> Result<(Vec<f32>, usize)> {
        if seq.dim() != self.config.feature_dim {
            return Err(Error::shape(format!(
                "motion width {} does not match tokenizer width {}",
                seq.dim(),
                self.config.feature_dim
            )));
        }
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        let d = seq.dim();
        let frames = seq.frames();
        let padded = frames.div_ceil(DOWNSAMPLE) * DOWNSAMPLE;
        let mut data = seq.data().to_vec();
        let last = seq.row(frames - 1).to_vec();
        for _ in frames..padded {
            data.extend_from_slice(&last);
        }
        debug_assert_eq!(data.len(), padded * d);
        Ok((self.stats.normalize(&data), padded))
    }

    /// Continuous latents `[n, d]` for a motion (right-padded with its last frame).
    pub fn latents(&self, seq: &MotionSequence) -> Result<Vec<f32>> {
        let (x, padded) = self.padded_input(seq)?;
        let mut tape = Tape::new();
        let p = tape.bind(&self.params, false);
        let xv = tape.constant_from(&[1, padded, self.config.feature_dim], x)?;
        let z = self.encoder(&mut tape, &p, xv)?;
        Ok(tape.value(z).to_vec())
    }

    pub fn encode(&self, seq: &MotionSequence) -> Result<TokenGrid> {
        self.warn_untrained();
        let z = self.latents(seq)?;
        let n = z.len() / self.config.code_dim;
        let q = self.quantize_latents(&z)?;
        TokenGrid::new(self.config.layers, n, q.indices, seq.frames())
    }

    /// Sum of the chosen codes, `[n, d]`.
    pub fn lookup(&self, grid: &TokenGrid) -> Result<Vec<f32>> {
        if grid.layers() > self.config.layers {
            return Err(Error::shape("grid has more layers than the tokenizer"));
        }
        grid.check_range(self.config.codebook_size)?;
        let d = self.config.code_dim;
        let mut z = vec![0.0; grid.len() * d];
        for q in 0..grid.layers() {
            let cb = self.codebook(q);
            for (i, &k) in grid.layer(q).iter().enumerate() {
                for c in 0..d {
                    z[i * d + c] += cb[k * d + c];
                }
            }
        }
        Ok(z)
    }

    /// Decode `[n, d]` latents to a motion of `frames` frames.
    pub fn decode_latents(&self, z: Vec<f32>, frames: usize, fps: u32) -> Result<MotionSequence> {
        let n = z.len() / self.config.code_dim;
        let mut tape = Tape::new();
        let p = tape.bind(&self.params, false);
        let zv = tape.constant_from(&[1, n, self.config.code_dim], z)?;
        let y = self.decoder(&mut tape, &p, zv)?;
        let d = self.config.feature_dim;
        let mut data = self.stats.denormalize(&tape.value(y)[..frames * d]);
        clamp_contacts(&mut data, d);
        MotionSequence::new(fps, d, data)
    }

    pub fn decode(&self, grid: &TokenGrid, fps: u32) -> Result<MotionSequence> {
        self.warn_untrained();
        let z = self.lookup(grid)?;
        self.decode_latents(z, grid.frames, fps)
    }

    /// Differentiable decode of `[b, n, d]` latents to de-normalised
    /// features `[b, 4n, D]`. Contacts are left unclamped.
    pub fn decode_features(&self, tape: &mut Tape<'_>, p: &Bound, z: Var) -> Result<Var> {
        let y = self.decoder(tape, p, z)?;
        let d = self.config.feature_dim;
        let std = tape.constant_from(&[d], self.stats.std.clone())?;
        let mean = tape.constant_from(&[d], self.stats.mean.clone())?;
        let y = tape.mul_broadcast(y, std)?;
        tape.add_broadcast(y, mean)
    }
}

fn clamp_contacts(data: &mut [f32], d: usize) {
    for row in data.chunks_exact_mut(d) {
        for v in &mut row[d - 2..] {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Reconstruction plus commitment objective.
///
/// `mean|m - m_hat| + mean(sg(z) - z_bar)^2 + beta * mean(z - sg(z_bar))^2`.
/// The codebook only receives gradient through the middle term.
pub fn tokenizer_loss(tape: &mut Tape<'_>, m: Var, m_hat: Var, z: Var, z_bar: Var, beta: f32) -> Result<Var> {
    let diff = tape.sub(m, m_hat)?;
    let diff = tape.abs(diff);
    let rec = tape.mean(diff);
    let zs = tape.detach(z);
    let c1 = tape.sub(zs, z_bar)?;
    let c1 = tape.square(c1);
    let c1 = tape.mean(c1);
    let zbs = tape.detach(z_bar);
    let c2 = tape.sub(z, zbs)?;
    let c2 = tape.square(c2);
    let c2 = tape.mean(c2);
    let c2 = tape.scale(c2, beta);
    let l = tape.add(rec, c1)?;
    tape.add(l, c2)
}

/// Re-seed codebook rows that went unused. `usage` holds one count per row;
/// `pool` holds candidate latents (rows of width `d`). Returns the number of
/// rows replaced.
pub fn codebook_reset(codebook: &mut [f32], usage: &[u64], pool: &[f32], d: usize, rng: &mut impl Rng) -> usize {
    let rows = pool.len() / d;
    if rows == 0 {
        return 0;
    }
    let mut replaced = 0;
    for (k, &u) in usage.iter().enumerate() {
        if u == 0 {
            let r = rng.gen_range(0..rows);
            codebook[k * d..(k + 1) * d].copy_from_slice(&pool[r * d..(r + 1) * d]);
            replaced += 1;
        }
    }
    replaced
}

/// `exp` of the entropy of the code-usage distribution.
pub fn perplexity(usage: &[u64]) -> f64 {
    let total: u64 = usage.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let h: f64 = usage
        .iter()
        .filter(|&&u| u > 0)
        .map(|&u| {
            let p = u as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    h.exp()
}
