use super::ParamSet;
use crate::error::{Error, Result};

/// Linear warm-up to a peak rate, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarmupSchedule {
    pub peak_lr: f32,
    pub warmup_steps: u64,
}

impl WarmupSchedule {
    /// Rate used for the 0-based optimizer step `step`.
    pub fn lr(&self, step: u64) -> f32 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.peak_lr
        } else {
            self.peak_lr * (step + 1) as f32 / self.warmup_steps as f32
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub schedule: WarmupSchedule,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            schedule: WarmupSchedule {
                peak_lr: 2e-4,
                warmup_steps: 200,
            },
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: 1.0,
        }
    }
}

/// AdamW with decoupled weight decay over one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamSet) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Moment buffers flattened as `[m_0, v_0, m_1, v_1, ...]`.
    pub fn moments(&self) -> impl Iterator<Item = &[f32]> {
        self.m
            .iter()
            .zip(&self.v)
            .flat_map(|(m, v)| [m.as_slice(), v.as_slice()])
    }

    /// Rebuild from a saved step counter and moment buffers.
    pub fn restore(&mut self, step: u64, moments: Vec<Vec<f32>>) -> Result<()> {
        if moments.len() != 2 * self.m.len() {
            return Err(Error::Checkpoint("optimizer state has wrong tensor count".into()));
        }
        let mut it = moments.into_iter();
        for i in 0..self.m.len() {
            let (m, v) = (it.next().unwrap(), it.next().unwrap());
            if m.len() != self.m[i].len() || v.len() != self.v[i].len() {
                return Err(Error::Checkpoint("optimizer state size mismatch".into()));
            }
            self.m[i] = m;
            self.v[i] = v;
        }
        self.step = step;
        Ok(())
    }

    /// Apply one update. `grads[i]` is `None` for tensors that received no
    /// gradient this step; their moments still decay. Returns the
    /// pre-clipping global gradient norm.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Vec<f32>>]) -> Result<f32> {
        if grads.len() != params.len() {
            return Err(Error::shape("gradient count does not match parameter count"));
        }
        let sq: f64 = grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|&g| (g as f64) * (g as f64))
            .sum();
        let norm = sq.sqrt() as f32;
        if !norm.is_finite() {
            return Err(Error::Numeric("non-finite gradient norm".into()));
        }
        let c = self.config;
        let clip = if c.clip_norm > 0.0 && norm > c.clip_norm {
            c.clip_norm / norm
        } else {
            1.0
        };
        let lr = c.schedule.lr(self.step);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in tensor.data_mut().iter_mut().enumerate() {
                let gj = g[j] * clip;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *w -= lr * (mh / (vh.sqrt() + c.eps) + c.weight_decay * *w);
            }
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn warmup_is_linear_then_flat() {
        let s = WarmupSchedule {
            peak_lr: 1.0,
            warmup_steps: 4,
        };
        let lrs: Vec<f32> = (0..6).map(|i| s.lr(i)).collect();
        assert_eq!(lrs, vec![0.25, 0.5, 0.75, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn adamw_minimises_a_quadratic() {
        let mut p = ParamSet::new();
        p.add("x", Tensor::new(vec![2], vec![3.0, -2.0]).unwrap());
        let cfg = AdamWConfig {
            schedule: WarmupSchedule {
                peak_lr: 0.05,
                warmup_steps: 0,
            },
            clip_norm: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &p);
        for _ in 0..2000 {
            let g: Vec<f32> = p.get(0).data().iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &[Some(g)]).unwrap();
        }
        assert!(p.get(0).data().iter().all(|x| x.abs() < 1e-2));
    }
}
