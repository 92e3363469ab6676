#![allow(dead_code)]

use masked_motion::error::Result;
use masked_motion::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], scale: f32, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Reduce any node to a scalar with fixed pseudo-random weights so every
/// output element contributes to the checked gradient.
pub fn project(tape: &mut Tape<'_>, out: Var, seed: u64) -> Result<Var> {
    if tape.value(out).len() == 1 {
        return Ok(out);
    }
    let shape = tape.shape(out).to_vec();
    let mut r = rng(seed ^ 0x9e37);
    let w = random_tensor(&shape, 1.0, &mut r);
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

/// Relative error `|a - n| / max(|a|, |n|)` between the analytic gradient and
/// central differences, taken over the concatenated gradient of all inputs.
pub fn grad_check<F>(inputs: &[Tensor], eps: f32, f: F) -> f64
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var>,
{
    let analytic: Vec<f64> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
        let out = f(&mut tape, &vars).unwrap();
        let loss = project(&mut tape, out, 1).unwrap();
        let mut g = tape.backward(loss).unwrap();
        vars.iter()
            .zip(inputs)
            .flat_map(|(&v, t)| {
                g.take(v)
                    .unwrap_or_else(|| vec![0.0; t.len()])
                    .into_iter()
                    .map(|x| x as f64)
            })
            .collect()
    };
    let eval = |inputs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        let loss = project(&mut tape, out, 1).unwrap();
        tape.scalar(loss) as f64
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += eps;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= eps;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * eps as f64));
        }
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom < 1e-12 {
        diff
    } else {
        diff / denom
    }
}
