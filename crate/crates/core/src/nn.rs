//! Parameterised layers built from tape primitives. Layers store indices into
//! a [`ParamSet`]; the caller binds that set to a tape and passes the
//! resulting [`Bound`] handles to `forward`.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Bound, ParamSet, Tape, Var};

/// `y = x W + b` over the last axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / (fan_in as f32).sqrt();
        let w = params.uniform(format!("{name}.w"), &[fan_in, fan_out], scale, rng);
        let b = params.zeros(format!("{name}.b"), &[fan_out]);
        Self { w, b, fan_in, fan_out }
    }

    /// Linear map whose weights and bias start at exactly zero.
    pub fn zeroed(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = params.zeros(format!("{name}.w"), &[fan_in, fan_out]);
        let b = params.zeros(format!("{name}.b"), &[fan_out]);
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p[self.w])?;
        tape.add_broadcast(y, p[self.b])
    }
}

/// Temporal convolution over `[batch, time, channels]` with zero padding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conv1d {
    pub lin: Linear,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            lin: Linear::new(params, name, kernel * c_in, c_out, rng),
            kernel,
            stride,
            pad,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, x: Var) -> Result<Var> {
        let cols = tape.unfold1d(x, self.kernel, self.stride, self.pad)?;
        self.lin.forward(tape, p, cols)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNorm {
    pub fn new(params: &mut ParamSet, name: &str, width: usize) -> Self {
        Self {
            gamma: params.filled(format!("{name}.gamma"), &[width], 1.0),
            beta: params.zeros(format!("{name}.beta"), &[width]),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p[self.gamma], p[self.beta])
    }
}
