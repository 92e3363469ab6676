use crate::error::{Error, Result};

/// Discrete codes for a motion: `layers x len` indices plus a mask channel.
///
/// `frames` is the motion length the grid was encoded from; decoding trims
/// the `len * 4` upsampled frames back to it.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenGrid {
    layers: usize,
    len: usize,
    indices: Vec<usize>,
    pub mask: Vec<bool>,
    pub frames: usize,
}

impl TokenGrid {
    pub fn new(layers: usize, len: usize, indices: Vec<usize>, frames: usize) -> Result<Self> {
        if indices.len() != layers * len {
            return Err(Error::shape(format!("{} indices for a {layers} x {len} grid", indices.len())));
        }
        if frames > len * super::DOWNSAMPLE || frames + super::DOWNSAMPLE <= len * super::DOWNSAMPLE {
            return Err(Error::shape(format!("{frames} frames do not fit a grid of {len} tokens")));
        }
        Ok(Self {
            layers,
            len,
            indices,
            mask: vec![false; len],
            frames,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn layer(&self, q: usize) -> &[usize] {
        &self.indices[q * self.len..(q + 1) * self.len]
    }

    pub fn layer_mut(&mut self, q: usize) -> &mut [usize] {
        &mut self.indices[q * self.len..(q + 1) * self.len]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn check_range(&self, k: usize) -> Result<()> {
        if let Some(&i) = self.indices.iter().find(|&&i| i >= k) {
            return Err(Error::shape(format!("token {i} outside codebook of {k}")));
        }
        Ok(())
    }

    /// Tokens `[start, start + len)` of every layer; frame count scales with
    /// the slice.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len {
            return Err(Error::InvalidRange("token slice outside the grid".into()));
        }
        let mut idx = Vec::with_capacity(self.layers * len);
        for q in 0..self.layers {
            idx.extend_from_slice(&self.layer(q)[start..start + len]);
        }
        let mut g = Self::new(self.layers, len, idx, len * super::DOWNSAMPLE)?;
        g.mask = self.mask[start..start + len].to_vec();
        Ok(g)
    }

    /// Join grids along time; the frame count becomes the sum of token spans.
    pub fn concat(parts: &[TokenGrid]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptySequence)?;
        if parts.iter().any(|p| p.layers != first.layers) {
            return Err(Error::shape("grids differ in layer count"));
        }
        let len: usize = parts.iter().map(|p| p.len).sum();
        let mut idx = Vec::with_capacity(first.layers * len);
        for q in 0..first.layers {
            for p in parts {
                idx.extend_from_slice(p.layer(q));
            }
        }
        let frames = parts[..parts.len() - 1].iter().map(|p| p.len * super::DOWNSAMPLE).sum::<usize>()
            + parts[parts.len() - 1].frames;
        let mut g = Self::new(first.layers, len, idx, frames)?;
        g.mask = parts.iter().flat_map(|p| p.mask.iter().copied()).collect();
        Ok(g)
    }
}

/// Result of residual quantization.
#[derive(Clone, Debug, PartialEq)]
pub struct Quantized {
    /// `layers x n` code indices.
    pub indices: Vec<usize>,
    /// Sum of the chosen codes, `n x d`.
    pub quantized: Vec<f32>,
    /// Root-mean residual norm after each layer.
    pub residual_norms: Vec<f32>,
}

/// Index of the nearest code to `x` (squared Euclidean), lowest index on ties.
pub fn nearest_code(x: &[f32], codebook: &[f32], d: usize) -> usize {
    let mut best = 0;
    let mut best_d = f32::INFINITY;
    for (k, c) in codebook.chunks_exact(d).enumerate() {
        let dist: f32 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist < best_d {
            best_d = dist;
            best = k;
        }
    }
    best
}

/// Residual vector quantization of `n x d` latents. Each layer picks the
/// nearest code to the running residual and subtracts it.
pub fn quantize(z: &[f32], d: usize, codebooks: &[&[f32]]) -> Result<Quantized> {
    if d == 0 || z.len() % d != 0 {
        return Err(Error::shape(format!("latents of {} values are not rows of {d}", z.len())));
    }
    if codebooks.is_empty() || codebooks.iter().any(|c| c.is_empty()) {
        return Err(Error::EmptyCodebook);
    }
    if codebooks.iter().any(|c| c.len() % d != 0) {
        return Err(Error::shape("codebook width differs from latent width"));
    }
    let n = z.len() / d;
    let mut residual = z.to_vec();
    let mut quantized = vec![0.0; z.len()];
    let mut indices = Vec::with_capacity(codebooks.len() * n);
    let mut residual_norms = Vec::with_capacity(codebooks.len());
    for cb in codebooks {
        for i in 0..n {
            let r = &mut residual[i * d..(i + 1) * d];
            let k = nearest_code(r, cb, d);
            indices.push(k);
            let code = &cb[k * d..(k + 1) * d];
            for c in 0..d {
                r[c] -= code[c];
                quantized[i * d + c] += code[c];
            }
        }
        let sq: f64 = residual.iter().map(|v| (*v as f64) * (*v as f64)).sum();
        residual_norms.push((sq / n.max(1) as f64).sqrt() as f32);
    }
    Ok(Quantized {
        indices,
        quantized,
        residual_norms,
    })
}
