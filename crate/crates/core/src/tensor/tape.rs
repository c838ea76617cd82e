//! Reverse-mode gradients over a closed set of primitives.
//!
//! A [`GradTape`] records every operation executed through it together with
//! its forward value. [`GradTape::backward`] replays the adjoints in reverse
//! order once; afterwards the tape is consumed and refuses a second replay.
//!
//! Recorded primitives: elementwise add/sub/scale/linear combination,
//! reshape, correlation and its transpose, matmul (plain and `A·Bᵀ`), soft
//! thresholding, batch normalization (batch statistics or frozen), grid
//! average pooling, row bias, mean cross-entropy, filter-bank expansion, sum
//! and inner product.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::nn;
use super::{conv2d_correlate, conv2d_filter_grad, conv2d_transpose, matmul, matmul_nt, matmul_tn, Padding, Tensor};
use crate::error::{Error, Result};
use crate::filterbank;
use crate::rotation::CyclicGroup;
use crate::sparse_coding::soft_threshold;

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Lincomb(Var, f64, Var, f64),
    Reshape(Var),
    Correlate {
        input: Var,
        filters: Var,
        padding: Padding,
    },
    ConvTranspose {
        codes: Var,
        filters: Var,
        padding: Padding,
    },
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    SoftThreshold(Var),
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
    FrozenNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    AvgPool(Var),
    AddBias(Var, Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
    ExpandBank {
        basis: Var,
        group: Arc<CyclicGroup>,
    },
    Sum(Var),
    Inner(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-channel statistics of one training-mode batch-norm application.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
    /// Number of values reduced per channel.
    pub count: usize,
}

#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of a scalar with respect to every leaf of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `leaf`; unreached leaves hold zeros. `None` for non-leaves.
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        self.grads.get(leaf.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, leaf: Var) -> Option<Tensor> {
        self.grads.get_mut(leaf.0).and_then(Option::take)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.axpy(1.0, &g).expect("gradient shape matches value"),
        slot @ None => *slot = Some(g),
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Leaf => true,
            Op::Constant => false,
            _ => parents.iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, vars: &[Var]) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        match vars.iter().find(|v| v.0 >= self.nodes.len()) {
            Some(v) => Err(Error::UnknownVariable(v.0)),
            None => Ok(()),
        }
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, &[])
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(&[a, b])?;
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(&[a, b])?;
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check(&[a])?;
        let out = self.value(a).scale(c);
        Ok(self.push(out, Op::Scale(a, c), &[a]))
    }

    /// `ca * a + cb * b`.
    pub fn lincomb(&mut self, a: Var, ca: f64, b: Var, cb: f64) -> Result<Var> {
        self.check(&[a, b])?;
        let out = self.value(a).lincomb(ca, self.value(b), cb)?;
        Ok(self.push(out, Op::Lincomb(a, ca, b, cb), &[a, b]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(&[a])?;
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    pub fn correlate(&mut self, input: Var, filters: Var, padding: Padding) -> Result<Var> {
        self.check(&[input, filters])?;
        let out = conv2d_correlate(self.value(input), self.value(filters), padding)?;
        Ok(self.push(
            out,
            Op::Correlate {
                input,
                filters,
                padding,
            },
            &[input, filters],
        ))
    }

    pub fn conv_transpose(&mut self, codes: Var, filters: Var, padding: Padding) -> Result<Var> {
        self.check(&[codes, filters])?;
        let out = conv2d_transpose(self.value(codes), self.value(filters), padding)?;
        Ok(self.push(
            out,
            Op::ConvTranspose {
                codes,
                filters,
                padding,
            },
            &[codes, filters],
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(&[a, b])?;
        let out = matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(&[a, b])?;
        let out = matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMulNt(a, b), &[a, b]))
    }

    /// Subgradient 0 at `|u| == lambda`.
    pub fn soft_threshold(&mut self, a: Var, lambda: f64) -> Result<Var> {
        self.check(&[a])?;
        let out = soft_threshold(self.value(a), lambda)?;
        Ok(self.push(out, Op::SoftThreshold(a), &[a]))
    }

    /// Training-mode batch normalization over all axes except 1.
    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        self.check(&[input, gamma, beta])?;
        let fwd = nn::batch_norm_forward(self.value(input), self.value(gamma), self.value(beta), eps)?;
        let (b, _, s) = nn::channel_view(self.value(input), "batch_norm")?;
        let stats = BatchStats {
            mean: fwd.mean,
            var: fwd.var,
            count: b * s,
        };
        let op = Op::BatchNorm {
            input,
            gamma,
            beta,
            normalized: fwd.normalized,
            inv_std: fwd.inv_std,
        };
        Ok((self.push(fwd.output, op, &[input, gamma, beta]), stats))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn frozen_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        self.check(&[input, gamma, beta])?;
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
        let out = nn::channel_affine(self.value(input), self.value(gamma), self.value(beta), mean, &inv_std)?;
        let op = Op::FrozenNorm {
            input,
            gamma,
            beta,
            mean: mean.to_vec(),
            inv_std,
        };
        Ok(self.push(out, op, &[input, gamma, beta]))
    }

    pub fn avg_pool_grid(&mut self, a: Var, grid: usize) -> Result<Var> {
        self.check(&[a])?;
        let out = nn::avg_pool_grid(self.value(a), grid)?;
        Ok(self.push(out, Op::AvgPool(a), &[a]))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        self.check(&[a, bias])?;
        let out = nn::add_row_bias(self.value(a), self.value(bias))?;
        Ok(self.push(out, Op::AddBias(a, bias), &[a, bias]))
    }

    /// Mean cross-entropy of `[B, K]` logits; a scalar.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(&[logits])?;
        let (loss, probs) = nn::cross_entropy(self.value(logits), labels)?;
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(loss), op, &[logits]))
    }

    /// Cyclic-group orbit of a basis `[m, C, h, w]`, see [`filterbank::expand`].
    pub fn expand_bank(&mut self, basis: Var, group: Arc<CyclicGroup>) -> Result<Var> {
        self.check(&[basis])?;
        let out = filterbank::expand(self.value(basis), &group)?;
        Ok(self.push(out, Op::ExpandBank { basis, group }, &[basis]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(&[a])?;
        let out = Tensor::scalar(self.value(a).sum());
        Ok(self.push(out, Op::Sum(a), &[a]))
    }

    pub fn inner(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(&[a, b])?;
        let out = Tensor::scalar(self.value(a).inner(self.value(b))?);
        Ok(self.push(out, Op::Inner(a, b), &[a, b]))
    }

    /// Replays adjoints from the scalar `loss` and returns gradients for every
    /// leaf. Consumes the tape: recorded values are released and any further
    /// use reports [`Error::TapeConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        self.check(&[loss])?;
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward", "scalar loss", self.value(loss).shape()));
        }
        self.consumed = true;
        let nodes = core::mem::take(&mut self.nodes);
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), 1.0));
        let needs = |v: &Var| nodes[v.0].requires_grad;

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::Add(a, b) => {
                    if needs(b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if needs(a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(b) {
                        accumulate(&mut grads, *b, g.scale(-1.0));
                    }
                    if needs(a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c)),
                Op::Lincomb(a, ca, b, cb) => {
                    if needs(a) {
                        accumulate(&mut grads, *a, g.scale(*ca));
                    }
                    if needs(b) {
                        accumulate(&mut grads, *b, g.scale(*cb));
                    }
                }
                Op::Reshape(a) => {
                    let shape = val(*a).shape().to_vec();
                    accumulate(&mut grads, *a, g.into_reshape(&shape)?);
                }
                Op::Correlate {
                    input,
                    filters,
                    padding,
                } => {
                    let f = val(*filters);
                    if needs(filters) {
                        let kernel = (f.shape()[2], f.shape()[3]);
                        let df = conv2d_filter_grad(val(*input), &g, kernel, *padding)?;
                        accumulate(&mut grads, *filters, df);
                    }
                    if needs(input) {
                        accumulate(&mut grads, *input, conv2d_transpose(&g, f, *padding)?);
                    }
                }
                Op::ConvTranspose {
                    codes,
                    filters,
                    padding,
                } => {
                    let f = val(*filters);
                    if needs(filters) {
                        let kernel = (f.shape()[2], f.shape()[3]);
                        let df = conv2d_filter_grad(&g, val(*codes), kernel, *padding)?;
                        accumulate(&mut grads, *filters, df);
                    }
                    if needs(codes) {
                        accumulate(&mut grads, *codes, conv2d_correlate(&g, f, *padding)?);
                    }
                }
                Op::MatMul(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads, *a, matmul_nt(&g, val(*b))?);
                    }
                    if needs(b) {
                        accumulate(&mut grads, *b, matmul_tn(val(*a), &g)?);
                    }
                }
                Op::MatMulNt(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads, *a, matmul(&g, val(*b))?);
                    }
                    if needs(b) {
                        accumulate(&mut grads, *b, matmul_tn(&g, val(*a))?);
                    }
                }
                Op::SoftThreshold(a) => {
                    let mut d = g;
                    for (gv, &out) in d.data_mut().iter_mut().zip(node.value.data()) {
                        if out == 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                } => {
                    let (dx, dgamma, dbeta) = nn::batch_norm_backward(&g, normalized, inv_std, val(*gamma));
                    if needs(input) {
                        accumulate(&mut grads, *input, dx);
                    }
                    if needs(gamma) {
                        accumulate(&mut grads, *gamma, dgamma);
                    }
                    if needs(beta) {
                        accumulate(&mut grads, *beta, dbeta);
                    }
                }
                Op::FrozenNorm {
                    input,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                } => {
                    let x = val(*input);
                    let (b, c, s) = nn::channel_view(x, "frozen_norm")?;
                    let gm = val(*gamma).data();
                    let mut dx = Tensor::zeros(x.shape());
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for bi in 0..b {
                        for ch in 0..c {
                            let base = (bi * c + ch) * s;
                            for k in base..base + s {
                                let gv = g.data()[k];
                                dx.data_mut()[k] = gv * inv_std[ch] * gm[ch];
                                dgamma[ch] += gv * (x.data()[k] - mean[ch]) * inv_std[ch];
                                dbeta[ch] += gv;
                            }
                        }
                    }
                    if needs(input) {
                        accumulate(&mut grads, *input, dx);
                    }
                    if needs(gamma) {
                        accumulate(&mut grads, *gamma, Tensor::new(&[c], dgamma)?);
                    }
                    if needs(beta) {
                        accumulate(&mut grads, *beta, Tensor::new(&[c], dbeta)?);
                    }
                }
                Op::AvgPool(a) => {
                    accumulate(&mut grads, *a, nn::avg_pool_grid_backward(&g, val(*a).shape()));
                }
                Op::AddBias(a, bias) => {
                    if needs(bias) {
                        accumulate(&mut grads, *bias, nn::column_sums(&g));
                    }
                    if needs(a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let seed = g.item();
                    let k = probs.shape()[1];
                    let scale = seed / labels.len() as f64;
                    let mut d = probs.scale(scale);
                    for (row, &label) in d.data_mut().chunks_mut(k).zip(labels) {
                        row[label] -= scale;
                    }
                    accumulate(&mut grads, *logits, d);
                }
                Op::ExpandBank { basis, group } => {
                    accumulate(&mut grads, *basis, filterbank::accumulate_basis_gradient(group, &g)?);
                }
                Op::Sum(a) => {
                    let seed = g.item();
                    accumulate(&mut grads, *a, Tensor::full(val(*a).shape(), seed));
                }
                Op::Inner(a, b) => {
                    let seed = g.item();
                    if needs(a) {
                        accumulate(&mut grads, *a, val(*b).scale(seed));
                    }
                    if needs(b) {
                        accumulate(&mut grads, *b, val(*a).scale(seed));
                    }
                }
            }
        }

        for (i, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                if grads[i].is_none() {
                    grads[i] = Some(Tensor::zeros(node.value.shape()));
                }
            } else {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(shape: &[usize], seed: u64) -> Tensor {
        let mut s = seed ^ 0x5851_f42d_4c95_7f2d;
        Tensor::from_fn(shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    /// Central finite differences of `f` around `x`, compared entrywise.
    fn check_fd(x: &Tensor, analytic: &Tensor, f: impl Fn(&Tensor) -> f64) {
        let h = 1e-5;
        for i in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6);
            assert!(err <= 1e-4, "entry {i}: fd {fd} analytic {a}");
        }
    }

    #[test]
    fn sum_gives_ones() {
        let mut tape = GradTape::new();
        let x = tape.leaf(lcg(&[2, 3], 1));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::full(&[2, 3], 1.0));
    }

    #[test]
    fn inner_with_self_gives_two_x() {
        let v = lcg(&[4], 2);
        let mut tape = GradTape::new();
        let x = tape.leaf(v.clone());
        let s = tape.inner(x, x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &v.scale(2.0));
    }

    #[test]
    fn second_backward_is_an_error() {
        let mut tape = GradTape::new();
        let x = tape.leaf(lcg(&[2], 3));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.backward(s).unwrap_err(), Error::TapeConsumed);
    }

    #[test]
    fn unreached_leaf_gets_zeros() {
        let mut tape = GradTape::new();
        let x = tape.leaf(lcg(&[3], 4));
        let y = tape.leaf(lcg(&[5], 5));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(y).unwrap(), &Tensor::zeros(&[5]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = GradTape::new();
        let x = tape.leaf(lcg(&[3], 6));
        assert!(matches!(tape.backward(x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn conv_primitives_pass_finite_differences() {
        let x0 = lcg(&[2, 2, 5, 5], 7);
        let f0 = lcg(&[3, 2, 3, 3], 8);
        for padding in [Padding::Same, Padding::Valid] {
            let y0 = conv2d_correlate(&x0, &f0, padding).unwrap();
            let w = lcg(y0.shape(), 9);
            // ⟨y, w⟩ + ⟨y, y⟩
            let loss = |x: &Tensor, f: &Tensor| {
                let y = conv2d_correlate(x, f, padding).unwrap();
                y.inner(&w).unwrap() + y.inner(&y).unwrap()
            };
            let mut tape = GradTape::new();
            let x = tape.leaf(x0.clone());
            let f = tape.leaf(f0.clone());
            let y = tape.correlate(x, f, padding).unwrap();
            let wc = tape.constant(w.clone());
            let l1 = tape.inner(y, wc).unwrap();
            let l2 = tape.inner(y, y).unwrap();
            let l = tape.add(l1, l2).unwrap();
            let g = tape.backward(l).unwrap();
            check_fd(&x0, g.get(x).unwrap(), |x| loss(x, &f0));
            check_fd(&f0, g.get(f).unwrap(), |f| loss(&x0, f));
        }
    }

    #[test]
    fn transpose_primitive_passes_finite_differences() {
        let z0 = lcg(&[2, 3, 4, 4], 11);
        let f0 = lcg(&[3, 2, 3, 2], 12);
        let w = lcg(&[2, 2, 4, 4], 13);
        let loss = |z: &Tensor, f: &Tensor| conv2d_transpose(z, f, Padding::Same).unwrap().inner(&w).unwrap();
        let mut tape = GradTape::new();
        let z = tape.leaf(z0.clone());
        let f = tape.leaf(f0.clone());
        let y = tape.conv_transpose(z, f, Padding::Same).unwrap();
        let wc = tape.constant(w.clone());
        let l = tape.inner(y, wc).unwrap();
        let g = tape.backward(l).unwrap();
        check_fd(&z0, g.get(z).unwrap(), |z| loss(z, &f0));
        check_fd(&f0, g.get(f).unwrap(), |f| loss(&z0, f));
    }

    #[test]
    fn matmul_primitives_pass_finite_differences() {
        let a0 = lcg(&[3, 4], 14);
        let b0 = lcg(&[4, 2], 15);
        let c0 = lcg(&[5, 4], 16);
        let w = lcg(&[3, 2], 17);
        let w2 = lcg(&[3, 5], 18);
        let loss = |a: &Tensor, b: &Tensor, c: &Tensor| {
            matmul(a, b).unwrap().inner(&w).unwrap() + matmul_nt(a, c).unwrap().inner(&w2).unwrap()
        };
        let mut tape = GradTape::new();
        let a = tape.leaf(a0.clone());
        let b = tape.leaf(b0.clone());
        let c = tape.leaf(c0.clone());
        let ab = tape.matmul(a, b).unwrap();
        let ac = tape.matmul_nt(a, c).unwrap();
        let wv = tape.constant(w.clone());
        let w2v = tape.constant(w2.clone());
        let l1 = tape.inner(ab, wv).unwrap();
        let l2 = tape.inner(ac, w2v).unwrap();
        let l = tape.add(l1, l2).unwrap();
        let g = tape.backward(l).unwrap();
        check_fd(&a0, g.get(a).unwrap(), |a| loss(a, &b0, &c0));
        check_fd(&b0, g.get(b).unwrap(), |b| loss(&a0, b, &c0));
        check_fd(&c0, g.get(c).unwrap(), |c| loss(&a0, &b0, c));
    }

    #[test]
    fn normalization_and_head_pass_finite_differences() {
        let x0 = lcg(&[3, 2, 4, 4], 19).scale(3.0);
        let gamma0 = Tensor::new(&[2], vec![1.3, 0.7]).unwrap();
        let beta0 = Tensor::new(&[2], vec![0.1, -0.2]).unwrap();
        let wh0 = lcg(&[4, 8], 20);
        let bh0 = lcg(&[4], 21);
        let labels = [1usize, 3, 0];
        let build = |tape: &mut GradTape, x: Var, gm: Var, bt: Var, wh: Var, bh: Var, frozen: bool| {
            let n = if frozen {
                tape.frozen_norm(x, gm, bt, &[0.2, -0.1], &[1.5, 0.8], 1e-5).unwrap()
            } else {
                tape.batch_norm(x, gm, bt, 1e-5).unwrap().0
            };
            let t = tape.soft_threshold(n, 0.3).unwrap();
            let p = tape.avg_pool_grid(t, 2).unwrap();
            let flat = tape.reshape(p, &[3, 8]).unwrap();
            let lin = tape.matmul_nt(flat, wh).unwrap();
            let logits = tape.add_bias(lin, bh).unwrap();
            tape.cross_entropy(logits, &labels).unwrap()
        };
        for frozen in [false, true] {
            let eval = |x: &Tensor, gm: &Tensor, bt: &Tensor, wh: &Tensor, bh: &Tensor| {
                let mut tape = GradTape::new();
                let vars = [x, gm, bt, wh, bh].map(|t| tape.leaf(t.clone()));
                let l = build(&mut tape, vars[0], vars[1], vars[2], vars[3], vars[4], frozen);
                tape.value(l).item()
            };
            let mut tape = GradTape::new();
            let vars = [&x0, &gamma0, &beta0, &wh0, &bh0].map(|t| tape.leaf(t.clone()));
            let l = build(&mut tape, vars[0], vars[1], vars[2], vars[3], vars[4], frozen);
            let g = tape.backward(l).unwrap();
            check_fd(&x0, g.get(vars[0]).unwrap(), |x| eval(x, &gamma0, &beta0, &wh0, &bh0));
            check_fd(&gamma0, g.get(vars[1]).unwrap(), |v| eval(&x0, v, &beta0, &wh0, &bh0));
            check_fd(&beta0, g.get(vars[2]).unwrap(), |v| eval(&x0, &gamma0, v, &wh0, &bh0));
            check_fd(&wh0, g.get(vars[3]).unwrap(), |v| eval(&x0, &gamma0, &beta0, v, &bh0));
            check_fd(&bh0, g.get(vars[4]).unwrap(), |v| eval(&x0, &gamma0, &beta0, &wh0, v));
        }
    }

    #[test]
    fn expand_bank_passes_finite_differences() {
        let group = Arc::new(CyclicGroup::new(6, (5, 5)).unwrap());
        let b0 = lcg(&[2, 1, 5, 5], 22);
        let w = lcg(&[12, 1, 5, 5], 23);
        let mut tape = GradTape::new();
        let b = tape.leaf(b0.clone());
        let e = tape.expand_bank(b, group.clone()).unwrap();
        let wc = tape.constant(w.clone());
        let l = tape.inner(e, wc).unwrap();
        let g = tape.backward(l).unwrap();
        check_fd(&b0, g.get(b).unwrap(), |b| {
            filterbank::expand(b, &group).unwrap().inner(&w).unwrap()
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = GradTape::new();
        let c = tape.constant(lcg(&[3], 24));
        let x = tape.leaf(lcg(&[3], 25));
        let s = tape.inner(c, x).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(x).is_some());
    }
}
