//! The tape: record a forward pass, replay it backwards, train with AdamW,
//! and sample through a straight-through Gumbel-Softmax.

use masked_motion::error::Result;
use masked_motion::tensor::{gumbel_softmax_st, AdamW, AdamWConfig, ParamSet, Tape, Tensor, WarmupSchedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    // d/dx sum(softmax(x) * w)
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0])?.with_grad());
    let w = tape.constant_from(&[1, 3], vec![1.0, 2.0, 3.0])?;
    let p = tape.softmax(x)?;
    let y = tape.mul(p, w)?;
    let loss = tape.sum(y);
    let mut grads = tape.backward(loss)?;
    println!("f(x) = {:.4}, df/dx = {:?}", tape.scalar(loss), grads.take(x).unwrap());

    // fit y = 3x - 1 with a 1x1 linear layer
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params = ParamSet::new();
    params.zeros("w", &[1, 1]);
    params.zeros("b", &[1]);
    let cfg = AdamWConfig {
        schedule: WarmupSchedule {
            peak_lr: 0.05,
            warmup_steps: 0,
        },
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::new(cfg, &params);
    for step in 0..300 {
        let xs: Vec<f32> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ys: Vec<f32> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        let grads = {
            let mut tape = Tape::new();
            let bound = tape.bind(&params, true);
            let xv = tape.constant_from(&[16, 1], xs)?;
            let h = tape.matmul(xv, bound.vars()[0])?;
            let h = tape.add_broadcast(h, bound.vars()[1])?;
            let t = tape.constant_from(&[16, 1], ys)?;
            let d = tape.sub(h, t)?;
            let d = tape.square(d);
            let l = tape.mean(d);
            if step % 100 == 0 {
                println!("step {step:>3} mse {:.5}", tape.scalar(l));
            }
            tape.backward(l)?.for_bound(&bound)
        };
        opt.step(&mut params, &grads)?;
    }
    println!("learned w = {:.3}, b = {:.3}", params.get(0).data()[0], params.get(1).data()[0]);

    // one-hot samples whose gradient is the soft relaxation's
    let mut tape = Tape::new();
    let logits = tape.leaf(Tensor::new(vec![1, 4], vec![1.0, 2.0, 0.5, -1.0])?.with_grad());
    let (soft, hard) = gumbel_softmax_st(&mut tape, logits, 0.5, &mut rng)?;
    println!("soft {:?}\nhard {:?}", tape.value(soft), tape.value(hard));
    Ok(())
}
