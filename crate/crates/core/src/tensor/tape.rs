use std::ops::Deref;

use super::kernels::{gelu, gelu_grad, gemm, gemm_strided, softmax_in_place};
use super::{Bound, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layout needed to turn pose-feature rows into global joint positions.
///
/// A feature row is `[root_velocity(3), local_positions(3*(J-1)), contacts(2)]`.
/// Root positions integrate the velocity (m/s) from `origin`; every other
/// joint sits at root + its local offset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FkSpec {
    pub joints: usize,
    pub fps: f32,
    pub origin: [f32; 3],
}

impl FkSpec {
    pub fn feature_dim(&self) -> usize {
        3 + 3 * (self.joints - 1) + 2
    }

    /// Plain forward kinematics on `frames` consecutive feature rows.
    pub fn apply(&self, features: &[f32], frames: usize, out: &mut [f32]) {
        let d = self.feature_dim();
        let j = self.joints;
        let mut root = self.origin;
        for t in 0..frames {
            let row = &features[t * d..(t + 1) * d];
            let o = &mut out[t * j * 3..(t + 1) * j * 3];
            o[..3].copy_from_slice(&root);
            for jj in 1..j {
                for c in 0..3 {
                    o[jj * 3 + c] = root[c] + row[3 + (jj - 1) * 3 + c];
                }
            }
            for c in 0..3 {
                root[c] += row[c] / self.fps;
            }
        }
    }
}

enum Value<'a> {
    Owned(Vec<f32>),
    Borrowed(&'a [f32]),
}

impl Deref for Value<'_> {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        match self {
            Value::Owned(v) => v,
            Value::Borrowed(v) => v,
        }
    }
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcast { x: Var, y: Var },
    MulBroadcast { x: Var, y: Var },
    Scale { x: Var, c: f32 },
    Relu(Var),
    Gelu(Var),
    Abs(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, mean: Vec<f32>, rstd: Vec<f32> },
    Softmax(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<f32>, probs: Vec<f32>, wsum: f32 },
    Attention { qkv: Var, batch: usize, seq: usize, heads: usize, probs: Vec<f32> },
    Embedding { table: Var, indices: Vec<usize> },
    Reshape(Var),
    Narrow { x: Var, outer: usize, axis_len: usize, inner: usize, start: usize, len: usize },
    Concat { xs: Vec<Var>, outer: usize, inner: usize, lens: Vec<usize> },
    Sum(Var),
    Mean(Var),
    StraightThrough { src: Var },
    Unfold { x: Var, batch: usize, t_in: usize, ch: usize, k: usize, stride: usize, pad: usize, t_out: usize },
    Upsample { x: Var, batch: usize, t_in: usize, ch: usize, factor: usize },
    Fk { x: Var, spec: FkSpec, batch: usize, frames: usize },
    TimeDiff { x: Var, outer: usize, n: usize, inner: usize, scale: f32 },
}

struct Node<'a> {
    value: Value<'a>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
///
/// Values of bound parameters are borrowed for the tape's lifetime. A tape can
/// be differentiated once; record a fresh tape for every forward pass.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f32>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Gradients for each tensor of a bound parameter set, in set order.
    pub fn for_bound(&mut self, bound: &Bound) -> Vec<Option<Vec<f32>>> {
        bound.0.iter().map(|&v| self.take(v)).collect()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f32>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), numel(&shape));
        self.nodes.push(Node {
            value: Value::Owned(value),
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that owns its data; `requires_grad` follows the tensor's flag.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad;
        let shape = t.shape().to_vec();
        self.push(t.into_data(), shape, Op::Leaf, rg)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(t.into_data(), shape, Op::Leaf, false)
    }

    pub fn constant_from(&mut self, shape: &[usize], data: Vec<f32>) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.constant(t))
    }

    /// Leaf borrowing a tensor's storage.
    pub fn param(&mut self, t: &'a Tensor, trainable: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(t.data()),
            shape: t.shape().to_vec(),
            op: Op::Leaf,
            requires_grad: trainable,
        });
        Var(self.nodes.len() - 1)
    }

    /// Bind every tensor of a parameter set as a borrowed leaf.
    pub fn bind(&mut self, params: &'a ParamSet, trainable: bool) -> Bound {
        Bound(
            params
                .tensors()
                .iter()
                .map(|t| self.param(t, trainable))
                .collect(),
        )
    }

    /// Copy of a node value cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.tensor(v);
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape")
    }

    pub fn scalar(&self, v: Var) -> f32 {
        self.value(v)[0]
    }

    // ---- linear algebra -------------------------------------------------

    /// `a[.., k] x b[k, n] -> [.., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let k = sb[0];
        let n = sb[1];
        let m = numel(&sa) / k.max(1);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, 0.0);
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, shape, Op::MatMul { a, b, m, k, n }, rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f32, f32) -> f32) -> Var {
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(out, shape, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// `x + y` where `y`'s shape is a trailing suffix of `x`'s.
    pub fn add_broadcast(&mut self, x: Var, y: Var) -> Result<Var> {
        let (sx, sy) = (self.shape(x), self.shape(y));
        if sy.len() > sx.len() || sx[sx.len() - sy.len()..] != *sy {
            return Err(Error::shape(format!("broadcast add {sx:?} + {sy:?}")));
        }
        let yv = self.value(y);
        let ny = yv.len().max(1);
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + yv[i % ny])
            .collect();
        let shape = sx.to_vec();
        let rg = self.rg(x) || self.rg(y);
        Ok(self.push(out, shape, Op::AddBroadcast { x, y }, rg))
    }

    /// `x * y` where `y`'s shape is a trailing suffix of `x`'s.
    pub fn mul_broadcast(&mut self, x: Var, y: Var) -> Result<Var> {
        let (sx, sy) = (self.shape(x), self.shape(y));
        if sy.len() > sx.len() || sx[sx.len() - sy.len()..] != *sy {
            return Err(Error::shape(format!("broadcast mul {sx:?} * {sy:?}")));
        }
        let yv = self.value(y);
        let ny = yv.len().max(1);
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v * yv[i % ny])
            .collect();
        let shape = sx.to_vec();
        let rg = self.rg(x) || self.rg(y);
        Ok(self.push(out, shape, Op::MulBroadcast { x, y }, rg))
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f32) -> f32) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(out, shape, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        self.map(x, Op::Scale { x, c }, |v| v * c)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(x, Op::Gelu(x), gelu)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.map(x, Op::Abs(x), f32::abs)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.mul(x, x).expect("same var")
    }

    // ---- normalisation / probability --------------------------------------

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let c = *self.shape(x).last().ok_or_else(|| Error::shape("layer_norm on scalar"))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape("layer_norm affine width"));
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let rows = xv.len() / c;
        let mut out = vec![0.0; xv.len()];
        let mut mean = vec![0.0; rows];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv[r * c..(r + 1) * c];
            let mu = row.iter().sum::<f32>() / c as f32;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f32>() / c as f32;
            let rs = 1.0 / (var + 1e-5).sqrt();
            for i in 0..c {
                out[r * c + i] = (row[i] - mu) * rs * g[i] + b[i];
            }
            mean[r] = mu;
            rstd[r] = rs;
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(out, shape, Op::LayerNorm { x, gamma, beta, mean, rstd }, rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let c = *self.shape(x).last().ok_or_else(|| Error::shape("softmax on scalar"))?;
        let xv = self.value(x);
        if xv.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("NaN input to softmax".into()));
        }
        let mut out = xv.to_vec();
        softmax_in_place(&mut out, c);
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(out, shape, Op::Softmax(x), rg))
    }

    /// Weighted mean of `-log softmax(logits)[target]` over rows.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f32]) -> Result<Var> {
        let k = *self.shape(logits).last().ok_or_else(|| Error::shape("cross_entropy on scalar"))?;
        let xv = self.value(logits);
        let rows = xv.len() / k;
        if targets.len() != rows || weights.len() != rows {
            return Err(Error::shape(format!(
                "cross_entropy: {rows} rows, {} targets, {} weights",
                targets.len(),
                weights.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::shape(format!("target {t} outside [0, {k})")));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::Parameter("cross_entropy weights must be finite and >= 0".into()));
        }
        let wsum: f32 = weights.iter().sum();
        if wsum <= 0.0 {
            return Err(Error::DegenerateLoss("all cross-entropy weights are zero".into()));
        }
        let mut probs = xv.to_vec();
        softmax_in_place(&mut probs, k);
        let mut loss = 0.0f64;
        for r in 0..rows {
            if weights[r] == 0.0 {
                continue;
            }
            let row = &xv[r * k..(r + 1) * k];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f32>().ln();
            loss += (weights[r] * (lse - row[targets[r]])) as f64;
        }
        let value = (loss / wsum as f64) as f32;
        let rg = self.rg(logits);
        Ok(self.push(
            vec![value],
            vec![],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
                wsum,
            },
            rg,
        ))
    }

    /// Multi-head self-attention on packed `qkv: [batch, seq, 3*width]`.
    ///
    /// `key_valid`, when given, has `batch*seq` flags; invalid keys receive no
    /// attention. Every row needs at least one valid key.
    pub fn attention(&mut self, qkv: Var, heads: usize, key_valid: Option<&[bool]>) -> Result<Var> {
        let s = self.shape(qkv).to_vec();
        if s.len() != 3 || s[2] % (3 * heads) != 0 {
            return Err(Error::shape(format!("attention input {s:?} with {heads} heads")));
        }
        let (batch, seq, w) = (s[0], s[1], s[2] / 3);
        let dh = w / heads;
        if let Some(kv) = key_valid {
            if kv.len() != batch * seq {
                return Err(Error::shape("attention key mask length"));
            }
            if (0..batch).any(|b| !kv[b * seq..(b + 1) * seq].iter().any(|&v| v)) {
                return Err(Error::shape("attention row without any valid key"));
            }
        }
        let scale = 1.0 / (dh as f32).sqrt();
        let x = self.value(qkv);
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; batch * seq * w];
        let rs = (3 * w) as isize;
        for b in 0..batch {
            for h in 0..heads {
                let base = b * seq * 3 * w + h * dh;
                let p_off = (b * heads + h) * seq * seq;
                gemm_strided(
                    seq, dh, seq, scale, x, base, rs, 1, x, base + w, 1, rs, 0.0, &mut probs, p_off,
                    seq as isize, 1,
                );
                let p = &mut probs[p_off..p_off + seq * seq];
                if let Some(kv) = key_valid {
                    for row in p.chunks_mut(seq) {
                        for (j, v) in row.iter_mut().enumerate() {
                            if !kv[b * seq + j] {
                                *v = f32::NEG_INFINITY;
                            }
                        }
                    }
                }
                softmax_in_place(p, seq);
                gemm_strided(
                    seq, seq, dh, 1.0, &probs, p_off, seq as isize, 1, x, base + 2 * w, rs, 1, 0.0,
                    &mut out, b * seq * w + h * dh, w as isize, 1,
                );
            }
        }
        let rg = self.rg(qkv);
        Ok(self.push(out, vec![batch, seq, w], Op::Attention { qkv, batch, seq, heads, probs }, rg))
    }

    // ---- indexing / layout ----------------------------------------------------

    /// Gather rows of a `[vocab, width]` table.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(Error::shape("embedding table must be 2-D"));
        }
        let (v, w) = (st[0], st[1]);
        if let Some(&i) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::shape(format!("embedding index {i} outside table of {v} rows")));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            out.extend_from_slice(&tv[i * w..(i + 1) * w]);
        }
        let rg = self.rg(table);
        Ok(self.push(out, vec![indices.len(), w], Op::Embedding { table, indices: indices.to_vec() }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() {
            return Err(Error::shape(format!("reshape {:?} -> {shape:?}", self.shape(x))));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(out, shape.to_vec(), Op::Reshape(x), rg))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape(format!("narrow {shape:?} axis {axis} [{start}, +{len})")));
        }
        let (outer, axis_len, inner) = axis_split(&shape, axis);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(out, oshape, Op::Narrow { x, outer, axis_len, inner, start, len }, rg))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| Error::shape("concat of nothing"))?).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat axis out of range"));
        }
        let mut lens = Vec::with_capacity(xs.len());
        for &v in xs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape(format!("concat {first:?} with {s:?}")));
            }
            lens.push(s[axis]);
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &l) in xs.iter().zip(&lens) {
                let xv = self.value(v);
                out.extend_from_slice(&xv[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(out, shape, Op::Concat { xs: xs.to_vec(), outer, inner, lens }, rg))
    }

    // ---- reductions -------------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).iter().map(|&v| v as f64).sum();
        let rg = self.rg(x);
        self.push(vec![s as f32], vec![], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s: f64 = xv.iter().map(|&v| v as f64).sum();
        let n = xv.len().max(1) as f64;
        let rg = self.rg(x);
        self.push(vec![(s / n) as f32], vec![], Op::Mean(x), rg)
    }

    /// Forward value `value`, gradient passed unchanged to `src`.
    pub fn straight_through(&mut self, value: Vec<f32>, src: Var) -> Result<Var> {
        if value.len() != self.value(src).len() {
            return Err(Error::shape("straight-through value size"));
        }
        let shape = self.shape(src).to_vec();
        let rg = self.rg(src);
        Ok(self.push(value, shape, Op::StraightThrough { src }, rg))
    }

    // ---- sequence ops -------------------------------------------------------------

    /// Zero-padded im2col over time: `[b, t, c] -> [b, t_out, k*c]`.
    pub fn unfold1d(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || stride == 0 || s[1] + 2 * pad < k {
            return Err(Error::shape(format!("unfold1d {s:?} k={k} stride={stride}")));
        }
        let (batch, t_in, ch) = (s[0], s[1], s[2]);
        let t_out = (t_in + 2 * pad - k) / stride + 1;
        let xv = self.value(x);
        let mut out = vec![0.0; batch * t_out * k * ch];
        for b in 0..batch {
            for to in 0..t_out {
                for kk in 0..k {
                    let ti = (to * stride + kk) as isize - pad as isize;
                    if ti < 0 || ti >= t_in as isize {
                        continue;
                    }
                    let src = (b * t_in + ti as usize) * ch;
                    let dst = ((b * t_out + to) * k + kk) * ch;
                    out[dst..dst + ch].copy_from_slice(&xv[src..src + ch]);
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            out,
            vec![batch, t_out, k * ch],
            Op::Unfold { x, batch, t_in, ch, k, stride, pad, t_out },
            rg,
        ))
    }

    /// Nearest-neighbour repeat along time: `[b, t, c] -> [b, t*factor, c]`.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || factor == 0 {
            return Err(Error::shape(format!("upsample {s:?} x{factor}")));
        }
        let (batch, t_in, ch) = (s[0], s[1], s[2]);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(batch * t_in * factor * ch);
        for b in 0..batch {
            for t in 0..t_in {
                let row = &xv[(b * t_in + t) * ch..(b * t_in + t + 1) * ch];
                for _ in 0..factor {
                    out.extend_from_slice(row);
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, vec![batch, t_in * factor, ch], Op::Upsample { x, batch, t_in, ch, factor }, rg))
    }

    /// Forward kinematics: `[.., frames, D] -> [.., frames, J, 3]`.
    pub fn forward_kinematics(&mut self, x: Var, spec: FkSpec) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = spec.feature_dim();
        if s.len() < 2 || s[s.len() - 1] != d {
            return Err(Error::shape(format!("forward kinematics expects [.., N, {d}], got {s:?}")));
        }
        let frames = s[s.len() - 2];
        let batch = numel(&s) / (frames * d).max(1);
        let xv = self.value(x);
        let mut out = vec![0.0; batch * frames * spec.joints * 3];
        for b in 0..batch {
            spec.apply(
                &xv[b * frames * d..(b + 1) * frames * d],
                frames,
                &mut out[b * frames * spec.joints * 3..(b + 1) * frames * spec.joints * 3],
            );
        }
        let mut shape = s[..s.len() - 1].to_vec();
        shape.extend([spec.joints, 3]);
        let rg = self.rg(x);
        Ok(self.push(out, shape, Op::Fk { x, spec, batch, frames }, rg))
    }

    /// Scaled forward difference along `axis`: `(x[t+1] - x[t]) * scale`.
    pub fn time_diff(&mut self, x: Var, axis: usize, scale: f32) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || s[axis] < 2 {
            return Err(Error::shape(format!("time_diff {s:?} axis {axis}")));
        }
        let (outer, n, inner) = axis_split(&s, axis);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(outer * (n - 1) * inner);
        for o in 0..outer {
            for t in 0..n - 1 {
                let a = (o * n + t) * inner;
                let b = a + inner;
                out.extend((0..inner).map(|i| (xv[b + i] - xv[a + i]) * scale));
            }
        }
        let mut shape = s;
        shape[axis] = n - 1;
        let rg = self.rg(x);
        Ok(self.push(out, shape, Op::TimeDiff { x, outer, n, inner, scale }, rg))
    }

    // ---- backward ----------------------------------------------------------------

    /// Reverse sweep from a scalar loss. Allowed once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Tape("backward already ran on this tape; record a new pass".into()));
        }
        if loss.0 >= self.nodes.len() || self.value(loss).len() != 1 {
            return Err(Error::Tape("backward needs a scalar recorded on this tape".into()));
        }
        if !self.rg(loss) {
            return Err(Error::Tape("loss is detached from every trainable leaf".into()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| -> &[f32] { &self.nodes[v.0].value };
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f32])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if wants(*a) {
                    let bv = val(*b);
                    acc(*a, &mut |da| gemm(m, n, k, g, false, bv, true, da, 1.0));
                }
                if wants(*b) {
                    let av = val(*a);
                    acc(*b, &mut |db| gemm(k, m, n, av, true, g, false, db, 1.0));
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * bv[j];
                    }
                });
                acc(*b, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * av[j];
                    }
                });
            }
            Op::AddBroadcast { x, y } => {
                acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(*y, &mut |d| {
                    let n = d.len().max(1);
                    for (j, gv) in g.iter().enumerate() {
                        d[j % n] += gv;
                    }
                });
            }
            Op::MulBroadcast { x, y } => {
                let (xv, yv) = (val(*x), val(*y));
                let ny = yv.len().max(1);
                acc(*x, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * yv[j % ny];
                    }
                });
                acc(*y, &mut |d| {
                    for (j, gv) in g.iter().enumerate() {
                        d[j % ny] += gv * xv[j];
                    }
                });
            }
            Op::Scale { x, c } => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g * c)),
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, &mut |d| {
                    for j in 0..d.len() {
                        if xv[j] > 0.0 {
                            d[j] += g[j];
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = val(*x);
                acc(*x, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * gelu_grad(xv[j]);
                    }
                });
            }
            Op::Abs(x) => {
                let xv = val(*x);
                acc(*x, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * if xv[j] > 0.0 { 1.0 } else if xv[j] < 0.0 { -1.0 } else { 0.0 };
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, mean, rstd } => {
                let xv = val(*x);
                let gv = val(*gamma);
                let c = gv.len();
                let rows = xv.len() / c;
                let xhat = |r: usize, j: usize| (xv[r * c + j] - mean[r]) * rstd[r];
                if wants(*x) {
                    acc(*x, &mut |dx| {
                        let mut dxh = vec![0.0; c];
                        for r in 0..rows {
                            let mut m1 = 0.0;
                            let mut m2 = 0.0;
                            for j in 0..c {
                                dxh[j] = g[r * c + j] * gv[j];
                                m1 += dxh[j];
                                m2 += dxh[j] * xhat(r, j);
                            }
                            m1 /= c as f32;
                            m2 /= c as f32;
                            for j in 0..c {
                                dx[r * c + j] += rstd[r] * (dxh[j] - m1 - xhat(r, j) * m2);
                            }
                        }
                    });
                }
                acc(*gamma, &mut |dg| {
                    for r in 0..rows {
                        for j in 0..c {
                            dg[j] += g[r * c + j] * xhat(r, j);
                        }
                    }
                });
                acc(*beta, &mut |db| {
                    for r in 0..rows {
                        for j in 0..c {
                            db[j] += g[r * c + j];
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let y: &[f32] = &node.value;
                let c = *node.shape.last().unwrap();
                acc(*x, &mut |dx| {
                    for (r, yr) in y.chunks(c).enumerate() {
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: f32 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            dx[r * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, weights, probs, wsum } => {
                let k = *self.nodes[logits.0].shape.last().unwrap();
                let scale = g[0] / wsum;
                acc(*logits, &mut |d| {
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let f = scale * w;
                        for j in 0..k {
                            d[r * k + j] += f * probs[r * k + j];
                        }
                        d[r * k + t] -= f;
                    }
                });
            }
            Op::Attention { qkv, batch, seq, heads, probs } => {
                let (batch, seq, heads) = (*batch, *seq, *heads);
                let x = val(*qkv);
                let w = node.shape[2];
                let dh = w / heads;
                let scale = 1.0 / (dh as f32).sqrt();
                let rs = (3 * w) as isize;
                acc(*qkv, &mut |dx| {
                    let mut dp = vec![0.0; seq * seq];
                    for b in 0..batch {
                        for h in 0..heads {
                            let base = b * seq * 3 * w + h * dh;
                            let o_off = b * seq * w + h * dh;
                            let p_off = (b * heads + h) * seq * seq;
                            // dV = P^T dO
                            gemm_strided(
                                seq, seq, dh, 1.0, probs, p_off, 1, seq as isize, g, o_off, w as isize, 1,
                                1.0, dx, base + 2 * w, rs, 1,
                            );
                            // dP = dO V^T
                            gemm_strided(
                                seq, dh, seq, 1.0, g, o_off, w as isize, 1, x, base + 2 * w, 1, rs, 0.0,
                                &mut dp, 0, seq as isize, 1,
                            );
                            let p = &probs[p_off..p_off + seq * seq];
                            for r in 0..seq {
                                let pr = &p[r * seq..(r + 1) * seq];
                                let dr = &mut dp[r * seq..(r + 1) * seq];
                                let dot: f32 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                                for j in 0..seq {
                                    dr[j] = pr[j] * (dr[j] - dot);
                                }
                            }
                            // dQ = scale * dS K ; dK = scale * dS^T Q
                            gemm_strided(
                                seq, seq, dh, scale, &dp, 0, seq as isize, 1, x, base + w, rs, 1, 1.0, dx,
                                base, rs, 1,
                            );
                            gemm_strided(
                                seq, seq, dh, scale, &dp, 0, 1, seq as isize, x, base, rs, 1, 1.0, dx,
                                base + w, rs, 1,
                            );
                        }
                    }
                });
            }
            Op::Embedding { table, indices } => {
                let w = self.nodes[table.0].shape[1];
                acc(*table, &mut |d| {
                    for (r, &ix) in indices.iter().enumerate() {
                        for j in 0..w {
                            d[ix * w + j] += g[r * w + j];
                        }
                    }
                });
            }
            Op::Reshape(x) | Op::StraightThrough { src: x } => {
                acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g))
            }
            Op::Narrow { x, outer, axis_len, inner, start, len } => {
                let (outer, axis_len, inner, start, len) = (*outer, *axis_len, *inner, *start, *len);
                acc(*x, &mut |d| {
                    for o in 0..outer {
                        let base = (o * axis_len + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (dv, gv) in d[base..base + len * inner].iter_mut().zip(src) {
                            *dv += gv;
                        }
                    }
                });
            }
            Op::Concat { xs, outer, inner, lens } => {
                let total: usize = lens.iter().sum();
                let mut offset = 0;
                for (&v, &l) in xs.iter().zip(lens) {
                    acc(v, &mut |d| {
                        for o in 0..*outer {
                            let src = (o * total + offset) * inner;
                            for (dv, gv) in d[o * l * inner..(o + 1) * l * inner]
                                .iter_mut()
                                .zip(&g[src..src + l * inner])
                            {
                                *dv += gv;
                            }
                        }
                    });
                    offset += l;
                }
            }
            Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len().max(1) as f32;
                acc(*x, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::Unfold { x, batch, t_in, ch, k, stride, pad, t_out } => {
                let (batch, t_in, ch, k, stride, pad, t_out) = (*batch, *t_in, *ch, *k, *stride, *pad, *t_out);
                acc(*x, &mut |d| {
                    for b in 0..batch {
                        for to in 0..t_out {
                            for kk in 0..k {
                                let ti = (to * stride + kk) as isize - pad as isize;
                                if ti < 0 || ti >= t_in as isize {
                                    continue;
                                }
                                let dst = (b * t_in + ti as usize) * ch;
                                let src = ((b * t_out + to) * k + kk) * ch;
                                for c in 0..ch {
                                    d[dst + c] += g[src + c];
                                }
                            }
                        }
                    }
                });
            }
            Op::Upsample { x, batch, t_in, ch, factor } => {
                let (batch, t_in, ch, factor) = (*batch, *t_in, *ch, *factor);
                acc(*x, &mut |d| {
                    for b in 0..batch {
                        for t in 0..t_in {
                            for r in 0..factor {
                                let src = ((b * t_in + t) * factor + r) * ch;
                                for c in 0..ch {
                                    d[(b * t_in + t) * ch + c] += g[src + c];
                                }
                            }
                        }
                    }
                });
            }
            Op::Fk { x, spec, batch, frames } => {
                let (batch, frames) = (*batch, *frames);
                let j = spec.joints;
                let dim = spec.feature_dim();
                acc(*x, &mut |d| {
                    for b in 0..batch {
                        let gb = &g[b * frames * j * 3..(b + 1) * frames * j * 3];
                        let db = &mut d[b * frames * dim..(b + 1) * frames * dim];
                        // Root of frame t depends on velocities of frames < t.
                        let mut carry = [0.0f32; 3];
                        for t in (0..frames).rev() {
                            for c in 0..3 {
                                db[t * dim + c] += carry[c] / spec.fps;
                            }
                            for jj in 0..j {
                                for c in 0..3 {
                                    let gv = gb[(t * j + jj) * 3 + c];
                                    carry[c] += gv;
                                    if jj > 0 {
                                        db[t * dim + 3 + (jj - 1) * 3 + c] += gv;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::TimeDiff { x, outer, n, inner, scale } => {
                let (outer, n, inner, scale) = (*outer, *n, *inner, *scale);
                acc(*x, &mut |d| {
                    for o in 0..outer {
                        for t in 0..n - 1 {
                            let a = (o * n + t) * inner;
                            let src = (o * (n - 1) + t) * inner;
                            for i in 0..inner {
                                let gv = g[src + i] * scale;
                                d[a + inner + i] += gv;
                                d[a + i] -= gv;
                            }
                        }
                    }
                });
            }
        }
    }
}
