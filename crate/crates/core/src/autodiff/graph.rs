use alloc::borrow::Cow;
use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::params::{Gradients, ParamId, ParamStore};
use super::{gemm, AutodiffError, Scalar, Tensor};
use crate::rng::RngState;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Input,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Transpose(Var),
    Concat(Vec<Var>),
    SliceRows(Var, usize),
    Mean(Var, usize),
    Sum(Var),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<F>, inv_std: Vec<F> },
    Dropout(Var, Vec<F>),
    CrossEntropy { logits: Var, class: usize, probs: Vec<F> },
}

struct Node<'p, F: Scalar> {
    shape: Vec<usize>,
    value: Cow<'p, [F]>,
    op: Op<F>,
    requires_grad: bool,
}

/// Tape of one forward pass. Values are borrowed from parameter stores and
/// inputs for `'p`; everything computed is owned by the graph.
pub struct Graph<'p, F: Scalar> {
    nodes: Vec<Node<'p, F>>,
    grads: Vec<Option<Vec<F>>>,
    params: BTreeMap<ParamId, Var>,
    consumed: bool,
}

impl<F: Scalar> Default for Graph<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => (shape[..shape.len() - 1].iter().product(), shape[shape.len() - 1]),
    }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

fn std_normal_cdf<F: Scalar>(x: F) -> F {
    F::of(0.5) * (F::one() + (x * F::of(core::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn std_normal_pdf<F: Scalar>(x: F) -> F {
    // 1/sqrt(2*pi)
    F::of(0.398_942_280_401_432_7) * (-(x * x) * F::of(0.5)).exp()
}

/// Adds `f`'s contribution into the gradient slot of `v`, allocating zeros
/// on first use.
fn accumulate<F: Scalar>(grads: &mut [Option<Vec<F>>], v: Var, len: usize, f: impl FnOnce(&mut [F])) {
    let slot = grads[v.0].get_or_insert_with(|| vec![F::zero(); len]);
    f(slot);
}

impl<'p, F: Scalar> Graph<'p, F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), params: BTreeMap::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'p, [F]>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node { shape, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, shape: Vec<usize>, value: Vec<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(shape, Cow::Owned(value), op, rg)
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor<F> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape is consistent")
    }

    /// Gradient of the last backward pass's loss with respect to `v`, when
    /// `v` depends on a parameter.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Constant leaf borrowed from the caller.
    pub fn input(&mut self, t: &'p Tensor<F>) -> Var {
        self.push(t.shape().to_vec(), Cow::Borrowed(t.data()), Op::Input, false)
    }

    /// Constant leaf owned by the graph.
    pub fn input_owned(&mut self, t: Tensor<F>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_data()), Op::Input, false)
    }

    /// Differentiable leaf for a stored parameter. Repeated requests for the
    /// same id return the same node.
    pub fn param(&mut self, store: &'p ParamStore<F>, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let t = store.get(id);
        let v = self.push(t.shape().to_vec(), Cow::Borrowed(t.data()), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, F::zero());
        Ok(self.push_op(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    /// Element-wise sum. A 1-D (or single-row) `b` whose length equals the
    /// last dimension of `a` is broadcast over rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa == sb {
            let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x + *y).collect();
            return Ok(self.push_op(sa, out, Op::Add(a, b), &[a, b]));
        }
        let (_, cols) = dims2(&sa);
        let (brows, bcols) = dims2(&sb);
        if brows != 1 || bcols != cols {
            return Err(mismatch("add", &sa, &sb));
        }
        let bias = self.value(b);
        let out = self
            .value(a)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(bias).map(|(x, y)| *x + *y))
            .collect();
        Ok(self.push_op(sa, out, Op::AddRow(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch("mul", sa, sb));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x * *y).collect();
        Ok(self.push_op(sa.to_vec(), out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let out = self.value(a).iter().map(|x| *x * c).collect();
        self.push_op(self.shape(a).to_vec(), out, Op::Scale(a, c), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(mismatch("transpose", s, &[]));
        }
        let (r, c) = (s[0], s[1]);
        let x = self.value(a);
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        Ok(self.push_op(vec![c, r], out, Op::Transpose(a), &[a]))
    }

    /// Joins 2-D tensors with equal row counts along the column axis.
    pub fn concat_last_dim(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = *parts.first().ok_or_else(|| mismatch("concat", &[], &[]))?;
        let rows = dims2(self.shape(first)).0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = dims2(self.shape(p));
            if r != rows || self.shape(p).len() > 2 {
                return Err(mismatch("concat", self.shape(first), self.shape(p)));
            }
            total += c;
        }
        let mut out = vec![F::zero(); rows * total];
        let mut offset = 0;
        for &p in parts {
            let c = dims2(self.shape(p)).1;
            for (i, row) in self.value(p).chunks(c).enumerate() {
                out[i * total + offset..i * total + offset + c].copy_from_slice(row);
            }
            offset += c;
        }
        let shape = if self.shape(first).len() == 1 { vec![total] } else { vec![rows, total] };
        Ok(self.push_op(shape, out, Op::Concat(parts.to_vec()), parts))
    }

    /// Rows `start..start + count` of a 2-D tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(a);
        if s.len() != 2 || start + count > s[0] || count == 0 {
            return Err(mismatch("slice_rows", s, &[start, count]));
        }
        let c = s[1];
        let out = self.value(a)[start * c..(start + count) * c].to_vec();
        Ok(self.push_op(vec![count, c], out, Op::SliceRows(a, start), &[a]))
    }

    /// Mean over `axis` of a 2-D tensor, keeping the reduced axis with size 1.
    pub fn mean_over_axis(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        let s = self.shape(a);
        if s.len() != 2 || axis > 1 {
            return Err(mismatch("mean_over_axis", s, &[axis]));
        }
        let (r, c) = (s[0], s[1]);
        let x = self.value(a);
        let (shape, out) = if axis == 0 {
            let inv = F::one() / F::of(r as f64);
            let mut out = vec![F::zero(); c];
            for row in x.chunks(c) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += *v;
                }
            }
            out.iter_mut().for_each(|o| *o *= inv);
            (vec![1, c], out)
        } else {
            let inv = F::one() / F::of(c as f64);
            (vec![r, 1], x.chunks(c).map(|row| row.iter().copied().sum::<F>() * inv).collect())
        };
        Ok(self.push_op(shape, out, Op::Mean(a, axis), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).iter().copied().sum::<F>();
        self.push_op(vec![1], vec![total], Op::Sum(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| if *x > F::zero() { *x } else { F::zero() }).collect();
        self.push_op(self.shape(a).to_vec(), out, Op::Relu(a), &[a])
    }

    /// Exact GeLU, `x * Phi(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| *x * std_normal_cdf(*x)).collect();
        self.push_op(self.shape(a).to_vec(), out, Op::Gelu(a), &[a])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_last_dim(&mut self, a: Var) -> Var {
        let (_, c) = dims2(self.shape(a));
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c) {
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            let inv = F::one() / z;
            row.iter_mut().for_each(|v| *v *= inv);
        }
        self.push_op(self.shape(a).to_vec(), out, Op::Softmax(a), &[a])
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// per-column `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (_, c) = dims2(self.shape(x));
        if dims2(self.shape(gain)) != (1, c) || dims2(self.shape(bias)) != (1, c) {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gain)));
        }
        let eps = F::of(LAYER_NORM_EPS);
        let inv_c = F::one() / F::of(c as f64);
        let xs = self.value(x);
        let mut xhat = Vec::with_capacity(xs.len());
        let mut inv_std = Vec::with_capacity(xs.len() / c.max(1));
        for row in xs.chunks(c) {
            let mean = row.iter().copied().sum::<F>() * inv_c;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<F>() * inv_c;
            let istd = F::one() / (var + eps).sqrt();
            inv_std.push(istd);
            xhat.extend(row.iter().map(|v| (*v - mean) * istd));
        }
        let (g, b) = (self.value(gain), self.value(bias));
        let out = xhat
            .chunks(c)
            .flat_map(|row| row.iter().zip(g).zip(b).map(|((h, g), b)| *h * *g + *b))
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push_op(shape, out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, &[x, gain, bias]))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`. Identity
    /// otherwise.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut RngState, train: bool) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutodiffError::ProbabilityOutOfRange(p));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let keep = F::of(1.0 / (1.0 - p));
        let mask: Vec<F> = (0..self.value(a).len())
            .map(|_| if rng.uniform() < p { F::zero() } else { keep })
            .collect();
        let out = self.value(a).iter().zip(&mask).map(|(x, m)| *x * *m).collect();
        Ok(self.push_op(self.shape(a).to_vec(), out, Op::Dropout(a, mask), &[a]))
    }

    /// `-log softmax(logits)[class]` over all elements of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, class: usize) -> Result<Var, AutodiffError> {
        let x = self.value(logits);
        if class >= x.len() {
            return Err(AutodiffError::ClassOutOfRange { class, classes: x.len() });
        }
        let top = (0..x.len()).fold(0, |best, j| if x[j] > x[best] { j } else { best });
        let m = x[top];
        let rest = x.iter().enumerate().filter(|(j, _)| *j != top).map(|(_, v)| (*v - m).exp()).sum::<F>();
        let lse = m + rest.ln_1p();
        let loss = (m - x[class]) + rest.ln_1p();
        let probs = x.iter().map(|v| (*v - lse).exp()).collect();
        Ok(self.push_op(vec![1], vec![loss], Op::CrossEntropy { logits, class, probs }, &[logits]))
    }

    /// `x * w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    /// Reverse pass from a scalar `loss`. Gradients accumulate over every
    /// path. A graph can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::GraphConsumed);
        }
        let n = self.nodes[loss.0].value.len();
        if n != 1 {
            return Err(AutodiffError::NonScalarOutput(n));
        }
        self.consumed = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[F]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[i];
        let rg = |v: &Var| nodes[v.0].requires_grad;
        let len = |v: &Var| nodes[v.0].value.len();
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[1];
                if rg(a) {
                    let bv = &nodes[b.0].value;
                    accumulate(grads, *a, m * k, |da| gemm(m, n, k, g, false, bv, true, da, F::one()));
                }
                if rg(b) {
                    let av = &nodes[a.0].value;
                    accumulate(grads, *b, k * n, |db| gemm(k, m, n, av, true, g, false, db, F::one()));
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if rg(v) {
                        accumulate(grads, *v, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += *g));
                    }
                }
            }
            Op::AddRow(a, b) => {
                if rg(a) {
                    accumulate(grads, *a, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += *g));
                }
                if rg(b) {
                    let c = len(b);
                    accumulate(grads, *b, c, |d| {
                        for row in g.chunks(c) {
                            d.iter_mut().zip(row).for_each(|(d, g)| *d += *g);
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                if rg(a) {
                    let bv = &nodes[b.0].value;
                    accumulate(grads, *a, g.len(), |d| {
                        for ((d, g), y) in d.iter_mut().zip(g).zip(bv.iter()) {
                            *d += *g * *y;
                        }
                    });
                }
                if rg(b) {
                    let av = &nodes[a.0].value;
                    accumulate(grads, *b, g.len(), |d| {
                        for ((d, g), x) in d.iter_mut().zip(g).zip(av.iter()) {
                            *d += *g * *x;
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                if rg(a) {
                    accumulate(grads, *a, g.len(), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += *g * *c));
                }
            }
            Op::Transpose(a) => {
                if rg(a) {
                    let (r, c) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    accumulate(grads, *a, r * c, |d| {
                        for i in 0..r {
                            for j in 0..c {
                                d[i * c + j] += g[j * r + i];
                            }
                        }
                    });
                }
            }
            Op::Concat(parts) => {
                let total = dims2(&node.shape).1;
                let mut offset = 0;
                for p in parts {
                    let (r, c) = dims2(&nodes[p.0].shape);
                    if rg(p) {
                        accumulate(grads, *p, r * c, |d| {
                            for i in 0..r {
                                let src = &g[i * total + offset..i * total + offset + c];
                                d[i * c..(i + 1) * c].iter_mut().zip(src).for_each(|(d, g)| *d += *g);
                            }
                        });
                    }
                    offset += c;
                }
            }
            Op::SliceRows(a, start) => {
                if rg(a) {
                    let c = nodes[a.0].shape[1];
                    let at = start * c;
                    accumulate(grads, *a, len(a), |d| {
                        d[at..at + g.len()].iter_mut().zip(g).for_each(|(d, g)| *d += *g);
                    });
                }
            }
            Op::Mean(a, axis) => {
                if rg(a) {
                    let (r, c) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    accumulate(grads, *a, r * c, |d| {
                        if *axis == 0 {
                            let inv = F::one() / F::of(r as f64);
                            for row in d.chunks_mut(c) {
                                row.iter_mut().zip(g).for_each(|(d, g)| *d += *g * inv);
                            }
                        } else {
                            let inv = F::one() / F::of(c as f64);
                            for (row, gi) in d.chunks_mut(c).zip(g) {
                                row.iter_mut().for_each(|d| *d += *gi * inv);
                            }
                        }
                    });
                }
            }
            Op::Sum(a) => {
                if rg(a) {
                    accumulate(grads, *a, len(a), |d| d.iter_mut().for_each(|d| *d += g[0]));
                }
            }
            Op::Relu(a) => {
                if rg(a) {
                    let x = &nodes[a.0].value;
                    accumulate(grads, *a, g.len(), |d| {
                        for ((d, g), x) in d.iter_mut().zip(g).zip(x.iter()) {
                            if *x > F::zero() {
                                *d += *g;
                            }
                        }
                    });
                }
            }
            Op::Gelu(a) => {
                if rg(a) {
                    let x = &nodes[a.0].value;
                    accumulate(grads, *a, g.len(), |d| {
                        for ((d, g), x) in d.iter_mut().zip(g).zip(x.iter()) {
                            *d += *g * (std_normal_cdf(*x) + *x * std_normal_pdf(*x));
                        }
                    });
                }
            }
            Op::Softmax(a) => {
                if rg(a) {
                    let c = dims2(&node.shape).1;
                    let y = &node.value;
                    accumulate(grads, *a, g.len(), |d| {
                        for ((drow, grow), yrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                            let dot = grow.iter().zip(yrow).map(|(g, y)| *g * *y).sum::<F>();
                            for ((d, g), y) in drow.iter_mut().zip(grow).zip(yrow) {
                                *d += *y * (*g - dot);
                            }
                        }
                    });
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let c = dims2(&node.shape).1;
                if rg(gain) {
                    accumulate(grads, *gain, c, |d| {
                        for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                            for ((d, g), h) in d.iter_mut().zip(grow).zip(hrow) {
                                *d += *g * *h;
                            }
                        }
                    });
                }
                if rg(bias) {
                    accumulate(grads, *bias, c, |d| {
                        for grow in g.chunks(c) {
                            d.iter_mut().zip(grow).for_each(|(d, g)| *d += *g);
                        }
                    });
                }
                if rg(x) {
                    let gv = &nodes[gain.0].value;
                    let inv_c = F::one() / F::of(c as f64);
                    accumulate(grads, *x, g.len(), |d| {
                        let rows = d.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c)).zip(inv_std);
                        for (((drow, grow), hrow), istd) in rows {
                            let mut mean_dh = F::zero();
                            let mut mean_dhh = F::zero();
                            for ((g, w), h) in grow.iter().zip(gv.iter()).zip(hrow) {
                                let dh = *g * *w;
                                mean_dh += dh;
                                mean_dhh += dh * *h;
                            }
                            mean_dh *= inv_c;
                            mean_dhh *= inv_c;
                            for (((d, g), w), h) in drow.iter_mut().zip(grow).zip(gv.iter()).zip(hrow) {
                                *d += *istd * (*g * *w - mean_dh - *h * mean_dhh);
                            }
                        }
                    });
                }
            }
            Op::Dropout(a, mask) => {
                if rg(a) {
                    accumulate(grads, *a, g.len(), |d| {
                        for ((d, g), m) in d.iter_mut().zip(g).zip(mask) {
                            *d += *g * *m;
                        }
                    });
                }
            }
            Op::CrossEntropy { logits, class, probs } => {
                if rg(logits) {
                    accumulate(grads, *logits, probs.len(), |d| {
                        for (j, (d, p)) in d.iter_mut().zip(probs).enumerate() {
                            let target = if j == *class { F::one() } else { F::zero() };
                            *d += g[0] * (*p - target);
                        }
                    });
                }
            }
        }
    }

    /// Per-parameter gradients after [`Graph::backward`], indexed like
    /// `store`. Parameters the loss does not reach get `None`.
    pub fn param_gradients(&self, store: &ParamStore<F>) -> Gradients<F> {
        let mut out = Gradients::empty(store.len());
        for (id, v) in &self.params {
            if let Some(g) = self.grad(*v) {
                out.set(*id, g.to_vec());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(rows, cols, v).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let x = t(1, 3, &[0.0, 0.0, 0.0]);
        let mut g = Graph::new();
        let v = g.input(&x);
        let s = g.softmax_last_dim(v);
        for p in g.value(s) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_closed_form() {
        let x = t(1, 2, &[10.0, -10.0]);
        let mut g = Graph::new();
        let v = g.input(&x);
        let l = g.cross_entropy(v, 0).unwrap();
        let expected = libm::log1p(libm::exp(-20.0));
        assert!((g.value(l)[0] - expected).abs() < 1e-20);
        assert!((g.value(l)[0] - 2.06e-9).abs() < 1e-11);
        let y = t(1, 2, &[11.0, -10.0]);
        let w = g.input(&y);
        let l2 = g.cross_entropy(w, 0).unwrap();
        assert!(g.value(l2)[0] < g.value(l)[0]);
        assert!(g.cross_entropy(v, 2).is_err());
    }

    #[test]
    fn activations_at_fixed_points() {
        let x = t(1, 2, &[0.0, -5.0]);
        let mut g = Graph::new();
        let v = g.input(&x);
        let ge = g.gelu(v);
        let re = g.relu(v);
        assert_eq!(g.value(ge)[0], 0.0);
        assert_eq!(g.value(re)[1], 0.0);
    }

    #[test]
    fn dropout_zero_is_identity_and_p_is_checked() {
        let x = t(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let mut g = Graph::new();
        let v = g.input(&x);
        let mut rng = RngState::new(1);
        let d = g.dropout(v, 0.0, &mut rng, true).unwrap();
        assert_eq!(g.value(d), x.data());
        let e = g.dropout(v, 0.5, &mut rng, false).unwrap();
        assert_eq!(g.value(e), x.data());
        assert_eq!(g.dropout(v, 1.0, &mut rng, true), Err(AutodiffError::ProbabilityOutOfRange(1.0)));
    }

    #[test]
    fn half_sum_of_squares_has_identity_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("x", t(1, 4, &[1.0, -2.0, 0.5, 3.0]));
        let mut g = Graph::new();
        let x = g.param(&store, id);
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let loss = g.scale(s, 0.5);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), store.get(id).data());
        assert_eq!(g.backward(loss), Err(AutodiffError::GraphConsumed));
    }

    #[test]
    fn linear_cross_entropy_matches_closed_form() {
        // logits = x W + b; dL/dW = x^T (softmax - onehot), dL/db = softmax - onehot
        let mut store = ParamStore::new();
        let w = store.add("w", t(3, 4, &[0.1, -0.2, 0.3, 0.0, 0.5, 0.4, -0.1, 0.2, -0.3, 0.1, 0.2, -0.4]));
        let b = store.add("b", t(1, 4, &[0.01, 0.02, -0.03, 0.0]));
        let x = t(1, 3, &[1.0, -2.0, 0.5]);
        let class = 2;
        let mut g = Graph::new();
        let xv = g.input(&x);
        let (wv, bv) = (g.param(&store, w), g.param(&store, b));
        let logits = g.linear(xv, wv, bv).unwrap();
        let loss = g.cross_entropy(logits, class).unwrap();
        g.backward(loss).unwrap();

        let z: Vec<f64> = g.value(logits).to_vec();
        let m = z.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let delta: Vec<f64> =
            e.iter().enumerate().map(|(j, v)| v / s - if j == class { 1.0 } else { 0.0 }).collect();
        let grads = g.param_gradients(&store);
        for i in 0..3 {
            for j in 0..4 {
                let expect = x.data()[i] * delta[j];
                assert!((grads.get(w).unwrap()[i * 4 + j] - expect).abs() < 1e-14);
            }
        }
        for j in 0..4 {
            assert!((grads.get(b).unwrap()[j] - delta[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_errors() {
        let a = t(2, 3, &[0.0; 6]);
        let mut g = Graph::new();
        let v = g.input(&a);
        assert!(matches!(g.matmul(v, v), Err(AutodiffError::ShapeMismatch { .. })));
        let loss = g.sum(v);
        let _ = loss;
        assert!(matches!(g.backward(v), Err(AutodiffError::NonScalarOutput(6))));
    }
}
