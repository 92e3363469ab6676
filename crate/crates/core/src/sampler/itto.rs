use super::Models;
use crate::adapters::pose_discrepancy;
use crate::error::{Error, Result};
use crate::motion::PoseConstraint;
use crate::tensor::{Tape, Tensor};
use crate::tokenizer::TokenGrid;

/// Update applied to the token latents each iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum IttoRule {
    /// `z <- z - lr * dD/dz`.
    Gradient,
    /// Adam-normalised gradient step with rate `lr`.
    #[default]
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IttoConfig {
    pub lr: f32,
    pub iters: usize,
    pub rule: IttoRule,
    /// Evaluate D on the re-quantized latents, passing the gradient
    /// straight through the quantizer; otherwise D is evaluated on the
    /// continuous latents and quantization happens once at the end.
    pub quantized: bool,
}

impl Default for IttoConfig {
    fn default() -> Self {
        Self {
            lr: 0.06,
            iters: 196,
            rule: IttoRule::Adam,
            quantized: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IttoReport {
    /// Discrepancy of the input grid.
    pub initial: f32,
    /// Discrepancy of the returned grid.
    pub final_: f32,
    /// Discrepancy before every update.
    pub history: Vec<f32>,
}

/// Discrepancy at latents `z` (re-quantized first when `quantized`) and
/// its gradient with respect to `z`.
fn discrepancy_and_grad(
    models: &Models,
    z: &[f32],
    c: &PoseConstraint,
    quantized: bool,
    grad: bool,
) -> Result<(f32, Vec<f32>)> {
    let tok = &models.tokenizer;
    let n = z.len() / tok.config.code_dim;
    let fk = models.skeleton.fk_spec(crate::motion::FPS);
    let mut tape = Tape::new();
    let p = tape.bind(&tok.params, false);
    let t = Tensor::new(vec![1, n, tok.config.code_dim], z.to_vec())?;
    let zv = if grad { tape.leaf(t.with_grad()) } else { tape.constant(t) };
    let input = if quantized {
        let q = tok.quantize_latents(z)?.quantized;
        tape.straight_through(q, zv)?
    } else {
        zv
    };
    let feats = tok.decode_features(&mut tape, &p, input)?;
    let feats = tape.narrow(feats, 1, 0, c.frames())?;
    let pos = tape.forward_kinematics(feats, fk)?;
    let d = pose_discrepancy(&mut tape, pos, c.positions(), c.valid())?;
    let dv = tape.scalar(d);
    if !grad || dv == 0.0 {
        return Ok((dv, Vec::new()));
    }
    let mut g = tape.backward(d)?;
    Ok((dv, g.take(zv).unwrap_or_default()))
}

/// Optimise token latents `[n, d]` against `c` with every network frozen.
/// Returns the latents with the lowest discrepancy seen and the
/// discrepancy before each update.
pub fn itto_latents(models: &Models, z: Vec<f32>, c: &PoseConstraint, cfg: IttoConfig) -> Result<(Vec<f32>, Vec<f32>)> {
    if c.valid_count() == 0 {
        return Err(Error::NoConstraint);
    }
    refine_latents(z, cfg, |z, grad| discrepancy_and_grad(models, z, c, cfg.quantized, grad))
}

/// Minimise `objective` over `z` with `cfg.rule` for `cfg.iters` updates.
/// `objective(z, true)` returns the value and gradient, `objective(z, false)`
/// the value only; an empty gradient stops early. Returns the best iterate
/// and the value before each update plus the final value.
pub fn refine_latents<F>(z: Vec<f32>, cfg: IttoConfig, mut objective: F) -> Result<(Vec<f32>, Vec<f32>)>
where
    F: FnMut(&[f32], bool) -> Result<(f32, Vec<f32>)>,
{
    if !(cfg.lr > 0.0) {
        return Err(Error::Parameter(format!("refinement step must be positive, got {}", cfg.lr)));
    }
    const B1: f32 = 0.9;
    const B2: f32 = 0.999;
    let mut history = Vec::with_capacity(cfg.iters + 1);
    let (mut m, mut v) = (vec![0.0f32; z.len()], vec![0.0f32; z.len()]);
    let mut cur = z;
    let mut best = (f32::INFINITY, cur.clone());
    for it in 0..cfg.iters {
        let (d, g) = objective(&cur, true)?;
        history.push(d);
        if d < best.0 {
            best = (d, cur.clone());
        }
        if g.is_empty() {
            return Ok((best.1, history));
        }
        match cfg.rule {
            IttoRule::Gradient => {
                for (zi, gi) in cur.iter_mut().zip(&g) {
                    *zi -= cfg.lr * gi;
                }
            }
            IttoRule::Adam => {
                let t = (it + 1) as i32;
                let (bc1, bc2) = (1.0 - B1.powi(t), 1.0 - B2.powi(t));
                for i in 0..cur.len() {
                    m[i] = B1 * m[i] + (1.0 - B1) * g[i];
                    v[i] = B2 * v[i] + (1.0 - B2) * g[i] * g[i];
                    cur[i] -= cfg.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + 1e-8);
                }
            }
        }
    }
    let (d, _) = objective(&cur, false)?;
    history.push(d);
    if d < best.0 {
        best = (d, cur);
    }
    Ok((best.1, history))
}

/// Refine a grid towards `constraint`, re-quantize the refined latents, and
/// keep whichever of the input and refined grids has the lower
/// discrepancy.
pub fn itto(models: &Models, grid: &TokenGrid, c: &PoseConstraint, cfg: IttoConfig) -> Result<(TokenGrid, IttoReport)> {
    if c.valid_count() == 0 {
        return Err(Error::NoConstraint);
    }
    if c.frames() > grid.len() * crate::tokenizer::DOWNSAMPLE {
        return Err(Error::shape("constraint longer than the grid"));
    }
    let z0 = models.tokenizer.lookup(grid)?;
    let initial = discrepancy_and_grad(models, &z0, c, false, false)?.0;
    if initial == 0.0 {
        return Ok((
            grid.clone(),
            IttoReport {
                initial,
                final_: initial,
                history: vec![initial],
            },
        ));
    }
    let (z, history) = itto_latents(models, z0, c, cfg)?;
    let q = models.tokenizer.quantize_latents(&z)?;
    let mut refined = TokenGrid::new(grid.layers(), grid.len(), q.indices, grid.frames)?;
    refined.mask = grid.mask.clone();
    let zr = models.tokenizer.lookup(&refined)?;
    let after = discrepancy_and_grad(models, &zr, c, false, false)?.0;
    let (out, final_) = if after <= initial { (refined, after) } else { (grid.clone(), initial) };
    Ok((out, IttoReport { initial, final_, history }))
}
