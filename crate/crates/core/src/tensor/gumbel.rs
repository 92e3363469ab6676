use rand::Rng;

use super::{Tape, Var};
use crate::error::{Error, Result};

/// Uniform draws are kept inside `(GUMBEL_EPS, 1 - GUMBEL_EPS)`.
pub const GUMBEL_EPS: f64 = 1e-10;

/// One standard Gumbel sample, `-ln(-ln u)`.
pub fn gumbel_noise(rng: &mut impl Rng) -> f32 {
    let u: f64 = rng.gen_range(GUMBEL_EPS..1.0 - GUMBEL_EPS);
    (-(-u.ln()).ln()) as f32
}

/// Straight-through Gumbel-Softmax over the last axis of `logits`.
///
/// Returns `(soft, hard)`. `hard` holds one-hot rows of the soft argmax in
/// the forward pass and routes its gradient unchanged into `soft`.
pub fn gumbel_softmax_st(
    tape: &mut Tape<'_>,
    logits: Var,
    temperature: f32,
    rng: &mut impl Rng,
) -> Result<(Var, Var)> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Parameter(format!(
            "Gumbel-Softmax temperature must be positive, got {temperature}"
        )));
    }
    let shape = tape.shape(logits).to_vec();
    let k = *shape.last().ok_or_else(|| Error::shape("Gumbel-Softmax on scalar"))?;
    let noise: Vec<f32> = (0..tape.value(logits).len()).map(|_| gumbel_noise(rng)).collect();
    let noise = tape.constant_from(&shape, noise)?;
    let perturbed = tape.add(logits, noise)?;
    let scaled = tape.scale(perturbed, 1.0 / temperature);
    let soft = tape.softmax(scaled)?;
    let mut hard = vec![0.0; tape.value(soft).len()];
    for (r, row) in tape.value(soft).chunks(k).enumerate() {
        hard[r * k + argmax(row)] = 1.0;
    }
    let hard = tape.straight_through(hard, soft)?;
    Ok((soft, hard))
}

/// Index of the largest entry; ties go to the lower index.
pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
