//! Genre-conditioned masked token transformer and its mask schedules.

mod train;

pub use train::{heldout_masked_ce, T2mTrainConfig, T2mTrainer, TokenExample};
pub(crate) use train::pad_rows;

use std::f64::consts::FRAC_PI_2;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};
use crate::tensor::{Bound, ParamSet, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskedConfig {
    pub codebook_size: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub genres: usize,
}

impl Default for MaskedConfig {
    fn default() -> Self {
        Self {
            codebook_size: 128,
            width: 128,
            layers: 4,
            heads: 4,
            ffn: 256,
            max_len: 64,
            genres: crate::motion::GENRES.len(),
        }
    }
}

impl MaskedConfig {
    pub fn mask_id(&self) -> usize {
        self.codebook_size
    }

    pub fn pad_id(&self) -> usize {
        self.codebook_size + 1
    }

    /// Row of the genre table used when the condition is dropped.
    pub fn null_genre(&self) -> usize {
        self.genres
    }
}

/// Pre-norm transformer block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    heads: usize,
}

impl Block {
    fn new(p: &mut ParamSet, name: &str, c: &MaskedConfig, rng: &mut impl Rng) -> Self {
        let w = c.width;
        Self {
            ln1: LayerNorm::new(p, &format!("{name}.ln1"), w),
            qkv: Linear::new(p, &format!("{name}.qkv"), w, 3 * w, rng),
            proj: Linear::new(p, &format!("{name}.proj"), w, w, rng),
            ln2: LayerNorm::new(p, &format!("{name}.ln2"), w),
            ff1: Linear::new(p, &format!("{name}.ff1"), w, c.ffn, rng),
            ff2: Linear::new(p, &format!("{name}.ff2"), c.ffn, w, rng),
            heads: c.heads,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, x: Var, key_valid: Option<&[bool]>) -> Result<Var> {
        let h = self.ln1.forward(tape, p, x)?;
        let h = self.qkv.forward(tape, p, h)?;
        let h = tape.attention(h, self.heads, key_valid)?;
        let h = self.proj.forward(tape, p, h)?;
        let x = tape.add(x, h)?;
        let h = self.ln2.forward(tape, p, x)?;
        let h = self.ff1.forward(tape, p, h)?;
        let h = tape.gelu(h);
        let h = self.ff2.forward(tape, p, h)?;
        tape.add(x, h)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    tok_emb: usize,
    pos_emb: usize,
    genre_emb: usize,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    head: Linear,
}

/// Token batch fed to [`MaskedTransformer::forward`]: `batch` rows of `len`
/// ids each, one optional genre per row.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    pub batch: usize,
    pub len: usize,
    pub genres: Vec<Option<usize>>,
}

impl TokenBatch {
    pub fn single(ids: Vec<usize>, genre: Option<usize>) -> Self {
        let len = ids.len();
        Self {
            ids,
            batch: 1,
            len,
            genres: vec![genre],
        }
    }

    /// Key-validity flags over `[genre slot, tokens]` per row; `None` when
    /// there is no padding.
    pub fn key_valid(&self, pad_id: usize) -> Option<Vec<bool>> {
        if !self.ids.contains(&pad_id) {
            return None;
        }
        let mut kv = Vec::with_capacity(self.batch * (self.len + 1));
        for row in self.ids.chunks(self.len) {
            kv.push(true);
            kv.extend(row.iter().map(|&i| i != pad_id));
        }
        Some(kv)
    }
}

/// Token embedding, learned positions, genre token, blocks and classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedTransformer {
    pub config: MaskedConfig,
    pub params: ParamSet,
    layout: Layout,
}

impl MaskedTransformer {
    pub fn new(config: MaskedConfig, rng: &mut impl Rng) -> Result<Self> {
        let c = config;
        if c.width == 0 || c.heads == 0 || c.width % c.heads != 0 {
            return Err(Error::Config(format!("width {} must split into {} heads", c.width, c.heads)));
        }
        if c.layers == 0 || c.codebook_size == 0 || c.max_len == 0 || c.ffn == 0 {
            return Err(Error::Config("transformer sizes must be positive".into()));
        }
        let mut p = ParamSet::new();
        let tok_emb = p.normal("tok_emb", &[c.codebook_size + 2, c.width], 0.02, rng);
        let pos_emb = p.normal("pos_emb", &[c.max_len + 1, c.width], 0.02, rng);
        let genre_emb = p.normal("genre_emb", &[c.genres + 1, c.width], 0.02, rng);
        let blocks = (0..c.layers).map(|l| Block::new(&mut p, &format!("block.{l}"), &c, rng)).collect();
        let ln_f = LayerNorm::new(&mut p, "ln_f", c.width);
        let head = Linear::new(&mut p, "head", c.width, c.codebook_size, rng);
        Ok(Self {
            config,
            params: p,
            layout: Layout {
                tok_emb,
                pos_emb,
                genre_emb,
                blocks,
                ln_f,
                head,
            },
        })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.layout.blocks
    }

    fn check(&self, b: &TokenBatch) -> Result<()> {
        let c = &self.config;
        if b.ids.len() != b.batch * b.len || b.genres.len() != b.batch {
            return Err(Error::shape("token batch layout"));
        }
        if b.len == 0 || b.len > c.max_len {
            return Err(Error::shape(format!("sequence of {} tokens, model holds {}", b.len, c.max_len)));
        }
        if let Some(&i) = b.ids.iter().find(|&&i| i > c.pad_id()) {
            return Err(Error::shape(format!("token id {i} outside vocabulary")));
        }
        if let Some(g) = b.genres.iter().flatten().find(|&&g| g >= c.genres) {
            return Err(Error::Parameter(format!("genre id {g} outside table of {}", c.genres)));
        }
        Ok(())
    }

    /// `[batch, len+1, width]` input sequence: genre token then tokens, with
    /// positions added.
    pub fn embed(&self, tape: &mut Tape<'_>, p: &Bound, b: &TokenBatch) -> Result<Var> {
        self.check(b)?;
        let w = self.config.width;
        let tok = tape.embedding(p[self.layout.tok_emb], &b.ids)?;
        let tok = tape.reshape(tok, &[b.batch, b.len, w])?;
        let gids: Vec<usize> = b.genres.iter().map(|g| g.unwrap_or(self.config.null_genre())).collect();
        let gen = tape.embedding(p[self.layout.genre_emb], &gids)?;
        let gen = tape.reshape(gen, &[b.batch, 1, w])?;
        let x = tape.concat(&[gen, tok], 1)?;
        let pos = tape.narrow(p[self.layout.pos_emb], 0, 0, b.len + 1)?;
        tape.add_broadcast(x, pos)
    }

    /// Run the blocks. `inject[l]`, when present, is added to the input of
    /// block `l`.
    pub fn run_blocks(
        &self,
        tape: &mut Tape<'_>,
        p: &Bound,
        mut x: Var,
        inject: &[Option<Var>],
        key_valid: Option<&[bool]>,
    ) -> Result<Var> {
        if !inject.is_empty() && inject.len() != self.layout.blocks.len() {
            return Err(Error::Config(format!(
                "{} injections for {} layers",
                inject.len(),
                self.layout.blocks.len()
            )));
        }
        for (l, block) in self.layout.blocks.iter().enumerate() {
            if let Some(Some(v)) = inject.get(l) {
                x = tape.add(x, *v)?;
            }
            x = block.forward(tape, p, x, key_valid)?;
        }
        Ok(x)
    }

    /// Final norm and classifier on the token positions: `[batch, len, K]`.
    pub fn head(&self, tape: &mut Tape<'_>, p: &Bound, x: Var, len: usize) -> Result<Var> {
        let x = tape.narrow(x, 1, 1, len)?;
        let x = self.layout.ln_f.forward(tape, p, x)?;
        self.layout.head.forward(tape, p, x)
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, b: &TokenBatch, inject: &[Option<Var>]) -> Result<Var> {
        let kv = b.key_valid(self.config.pad_id());
        let x = self.embed(tape, p, b)?;
        let x = self.run_blocks(tape, p, x, inject, kv.as_deref())?;
        self.head(tape, p, x, b.len)
    }

    /// Untaped logits `[len, K]` for one sequence.
    pub fn logits(&self, ids: &[usize], genre: Option<usize>) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.params, false);
        let y = self.forward(&mut tape, &p, &TokenBatch::single(ids.to_vec(), genre), &[])?;
        Ok(tape.value(y).to_vec())
    }
}

/// Unclamped cosine mask ratio `cos(pi u / 2)`.
pub fn cosine_ratio(u: f64) -> f64 {
    (FRAC_PI_2 * u).cos()
}

/// Training corruption: mask `ceil(r n)` random positions with
/// `r = clamp(cos(pi u / 2), 0.1, 1)`. Returns the corrupted ids and the
/// mask flags.
pub fn training_mask(ids: &[usize], mask_id: usize, rng: &mut impl Rng) -> Result<(Vec<usize>, Vec<bool>)> {
    let n = ids.len();
    if n < 2 {
        return Err(Error::SequenceTooShort { needed: 2, got: n });
    }
    let u: f64 = rng.gen();
    mask_with_ratio(ids, mask_id, cosine_ratio(u).clamp(0.1, 1.0), rng)
}

pub(crate) fn mask_with_ratio(
    ids: &[usize],
    mask_id: usize,
    ratio: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<usize>, Vec<bool>)> {
    let n = ids.len();
    let count = ((ratio * n as f64).ceil() as usize).clamp(1, n);
    let mut mask = vec![false; n];
    for i in sample(rng, n, count) {
        mask[i] = true;
    }
    let out = ids
        .iter()
        .zip(&mask)
        .map(|(&t, &m)| if m { mask_id } else { t })
        .collect();
    Ok((out, mask))
}

/// Per-position cross-entropy weights: 1 on masked positions, `lambda_unmask`
/// elsewhere, 0 on padding.
pub fn t2m_weights(mask: &[bool], targets: &[usize], pad_id: usize, lambda_unmask: f32) -> Vec<f32> {
    mask.iter()
        .zip(targets)
        .map(|(&m, &t)| {
            if t >= pad_id - 1 {
                0.0
            } else if m {
                1.0
            } else {
                lambda_unmask
            }
        })
        .collect()
}

/// Weighted token cross-entropy over all non-pad positions.
pub fn t2m_loss(
    tape: &mut Tape<'_>,
    logits: Var,
    targets: &[usize],
    mask: &[bool],
    pad_id: usize,
    lambda_unmask: f32,
) -> Result<Var> {
    let k = *tape.shape(logits).last().unwrap_or(&0);
    let flat = tape.reshape(logits, &[targets.len(), k])?;
    let w = t2m_weights(mask, targets, pad_id, lambda_unmask);
    let tg: Vec<usize> = targets.iter().map(|&t| t.min(k - 1)).collect();
    tape.cross_entropy(flat, &tg, &w)
}

/// Positions left masked after step `t` of `s_total`: `floor(L cos(pi t / 2S))`.
pub fn remask_count(len: usize, t: usize, s_total: usize) -> usize {
    if s_total == 0 || t >= s_total {
        return 0;
    }
    let v = len as f64 * (FRAC_PI_2 * t as f64 / s_total as f64).cos();
    (v.floor() as usize).min(len)
}
