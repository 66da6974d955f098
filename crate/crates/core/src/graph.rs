//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is an append-only tape. Each operation pushes a node holding
//! its output value and whatever it saved for the backward pass; because
//! inputs always precede outputs, tape order is a topological order and
//! [`Graph::backward`] simply walks it in reverse.
//!
//! Leaves created with `requires_grad` keep an accumulated gradient across
//! backward calls until [`Graph::zero_grad`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::conv::{self, ConvGeom};
use crate::kernels::{pool, upsample};
use crate::metrics::{ClassReduction, TverskyWeights};
use crate::tensor::{Layout5, Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv { input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom },
    ConvTranspose { input: Var, weight: Var, geom: ConvGeom },
    Upsample { input: Var, planes: usize, dims: [usize; 3], factor: usize },
    MaxPool { input: Var, planes: usize, in_len: usize, out_len: usize, argmax: Vec<usize> },
    BatchNormTrain { input: Var, gamma: Var, beta: Var, layout: Layout5, xhat: Vec<T>, inv_std: Vec<T> },
    BatchNormEval { input: Var, gamma: Var, beta: Var, layout: Layout5, xhat: Vec<T>, inv_std: Vec<T> },
    LeakyRelu { input: Var, slope: T },
    Sigmoid { input: Var },
    Softmax { input: Var, layout: Layout5 },
    Dropout { input: Var, mask: Vec<T> },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    GateMul { x: Var, alpha: Var, layout: Layout5 },
    Concat { a: Var, b: Var, n: usize, a_len: usize, b_len: usize },
    Sum { input: Var },
    SoftTversky { probs: Var, target: Vec<T>, layout: Layout5, weights: TverskyWeights, terms: Vec<(T, T)>, scale: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Batch statistics produced by a training-mode batch normalization, used to
/// update running averages.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance.
    pub var: Vec<T>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(msg: alloc::string::String) -> Error {
    Error::ShapeMismatch(msg)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn layout(&self, v: Var) -> Result<Layout5> {
        Layout5::of(self.value(v).extents())
    }

    /// Cross-correlation with a cubic `(C_out, C_in, k, k, k)` kernel.
    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let l = self.layout(input)?;
        let we = self.value(weight).extents().to_vec();
        let (co, ci, k) = match we[..] {
            [co, ci, a, b, c] if a == b && b == c => (co, ci, a),
            _ => return Err(mismatch(format!("conv weight must be (C_out, C_in, k, k, k), got {we:?}"))),
        };
        if ci != l.c {
            return Err(mismatch(format!("conv weight expects {ci} input channels, input has {}", l.c)));
        }
        if let Some(b) = bias {
            if self.value(b).len() != co {
                return Err(mismatch(format!("bias has {} entries for {co} channels", self.value(b).len())));
            }
        }
        let geom = ConvGeom::new(l.n, ci, co, k, stride, pad, l.dims)?;
        let mut out = vec![T::zero(); l.n * co * geom.out_len()];
        conv::conv3d_forward(
            &geom,
            self.value(input).values(),
            self.value(weight).values(),
            bias.map(|b| self.value(b).values()),
            &mut out,
        );
        let value = Tensor::new(&l.extents_with(co, geom.out_dims), out)?;
        let rg = self.needs(&[input, weight]) || bias.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(value, Op::Conv { input, weight, bias, geom }, rg))
    }

    /// Pointwise channel mixing: [`Graph::conv3d`] restricted to `k = 1`.
    pub fn conv3d_1x1(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let we = self.value(weight).extents();
        if we.len() != 5 || we[2..] != [1, 1, 1] {
            return Err(mismatch(format!("1x1x1 conv weight must be (C_out, C_in, 1, 1, 1), got {we:?}")));
        }
        self.conv3d(input, weight, bias, 1, 0)
    }

    /// Transposed convolution with a `(C_in, C_out, k, k, k)` kernel and no padding:
    /// output extent `(d - 1)·stride + k` per axis.
    pub fn transposed_conv3d(&mut self, input: Var, weight: Var, stride: usize) -> Result<Var> {
        let l = self.layout(input)?;
        let we = self.value(weight).extents().to_vec();
        let (ca, cb, k) = match we[..] {
            [ca, cb, a, b, c] if a == b && b == c => (ca, cb, a),
            _ => return Err(mismatch(format!("transposed weight must be (C_in, C_out, k, k, k), got {we:?}"))),
        };
        if ca != l.c {
            return Err(mismatch(format!("transposed weight expects {ca} input channels, input has {}", l.c)));
        }
        let geom = ConvGeom::transposed(l.n, ca, cb, k, stride, 0, l.dims)?;
        let mut out = vec![T::zero(); l.n * cb * geom.in_len()];
        conv::conv3d_backward_input(&geom, self.value(input).values(), self.value(weight).values(), &mut out);
        let value = Tensor::new(&l.extents_with(cb, geom.in_dims), out)?;
        let rg = self.needs(&[input, weight]);
        Ok(self.push(value, Op::ConvTranspose { input, weight, geom }, rg))
    }

    pub fn upsample_trilinear(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::InvalidConfig("upsampling factor must be ≥ 1".into()));
        }
        let l = self.layout(input)?;
        let planes = l.n * l.c;
        let odims = l.dims.map(|d| d * factor);
        let mut out = vec![T::zero(); planes * odims.iter().product::<usize>()];
        upsample::upsample_forward(planes, l.dims, factor, self.value(input).values(), &mut out);
        let value = Tensor::new(&l.extents_with(l.c, odims), out)?;
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::Upsample { input, planes, dims: l.dims, factor }, rg))
    }

    pub fn maxpool3d(&mut self, input: Var, k: usize) -> Result<Var> {
        let l = self.layout(input)?;
        if k == 0 {
            return Err(Error::InvalidConfig("pool size must be ≥ 1".into()));
        }
        if let Some(&e) = l.dims.iter().find(|&&d| d % k != 0) {
            return Err(Error::IndivisibleExtent { extent: e, divisor: k });
        }
        let planes = l.n * l.c;
        let odims = l.dims.map(|d| d / k);
        let out_len: usize = odims.iter().product();
        let mut out = vec![T::zero(); planes * out_len];
        let mut argmax = vec![0; planes * out_len];
        pool::maxpool_forward(planes, l.dims, k, self.value(input).values(), &mut out, &mut argmax);
        let value = Tensor::new(&l.extents_with(l.c, odims), out)?;
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::MaxPool { input, planes, in_len: l.spatial(), out_len, argmax }, rg))
    }

    fn check_affine(&self, l: &Layout5, gamma: Var, beta: Var) -> Result<()> {
        if self.value(gamma).len() != l.c || self.value(beta).len() != l.c {
            return Err(mismatch(format!("batchnorm affine parameters must have {} entries", l.c)));
        }
        Ok(())
    }

    /// Batch normalization using the statistics of this batch (over batch and
    /// space, per channel). Returns the batch mean and unbiased variance.
    pub fn batchnorm_train(&mut self, input: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let l = self.layout(input)?;
        self.check_affine(&l, gamma, beta)?;
        let sp = l.spatial();
        let m = l.n * sp;
        let x = self.value(input).values();
        let mf = T::from_f64(m as f64);
        let mut mean = vec![T::zero(); l.c];
        let mut var_b = vec![T::zero(); l.c];
        for c in 0..l.c {
            let s: T = (0..l.n).map(|n| x[(n * l.c + c) * sp..][..sp].iter().copied().sum::<T>()).sum();
            let mu = s / mf;
            let ss: T = (0..l.n)
                .map(|n| x[(n * l.c + c) * sp..][..sp].iter().map(|&v| (v - mu) * (v - mu)).sum::<T>())
                .sum();
            mean[c] = mu;
            var_b[c] = ss / mf;
        }
        let inv_std: Vec<T> = var_b.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (xhat, out) = self.normalize(&l, x, &mean, &inv_std, gamma, beta);
        let unbiased = if m > 1 { T::from_f64(m as f64 / (m - 1) as f64) } else { T::one() };
        let stats = BatchStats { mean, var: var_b.iter().map(|&v| v * unbiased).collect() };
        let value = Tensor::new(self.value(input).extents(), out)?;
        let rg = self.needs(&[input, gamma, beta]);
        let v = self.push(value, Op::BatchNormTrain { input, gamma, beta, layout: l, xhat, inv_std }, rg);
        Ok((v, stats))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batchnorm_eval(&mut self, input: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        let l = self.layout(input)?;
        self.check_affine(&l, gamma, beta)?;
        if mean.len() != l.c || var.len() != l.c {
            return Err(mismatch(format!("running statistics must have {} entries", l.c)));
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let x = self.value(input).values();
        let (xhat, out) = self.normalize(&l, x, mean, &inv_std, gamma, beta);
        let value = Tensor::new(self.value(input).extents(), out)?;
        let rg = self.needs(&[input, gamma, beta]);
        Ok(self.push(value, Op::BatchNormEval { input, gamma, beta, layout: l, xhat, inv_std }, rg))
    }

    fn normalize(&self, l: &Layout5, x: &[T], mean: &[T], inv_std: &[T], gamma: Var, beta: Var) -> (Vec<T>, Vec<T>) {
        let sp = l.spatial();
        let g = self.value(gamma).values();
        let b = self.value(beta).values();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for n in 0..l.n {
            for c in 0..l.c {
                let off = (n * l.c + c) * sp;
                for i in off..off + sp {
                    let h = (x[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = h * g[c] + b[c];
                }
            }
        }
        (xhat, out)
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.leaky_relu(input, T::zero())
    }

    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Result<Var> {
        let value = self.value(input).map(|v| if v > T::zero() { v } else { v * slope });
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::LeakyRelu { input, slope }, rg))
    }

    /// Logistic function, clamped so outputs stay strictly inside (0, 1) in
    /// the working precision.
    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(sigmoid);
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::Sigmoid { input }, rg))
    }

    /// Softmax over the channel axis at every voxel.
    pub fn softmax_channels(&mut self, input: Var) -> Result<Var> {
        let l = self.layout(input)?;
        let sp = l.spatial();
        let x = self.value(input).values();
        let mut out = vec![T::zero(); x.len()];
        for n in 0..l.n {
            let base = n * l.c * sp;
            for v in 0..sp {
                let at = |c: usize| base + c * sp + v;
                let mx = (0..l.c).fold(T::neg_infinity(), |m, c| m.max(x[at(c)]));
                let mut total = T::zero();
                for c in 0..l.c {
                    let e = (x[at(c)] - mx).exp();
                    out[at(c)] = e;
                    total += e;
                }
                for c in 0..l.c {
                    out[at(c)] /= total;
                }
            }
        }
        let value = Tensor::new(self.value(input).extents(), out)?;
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::Softmax { input, layout: l }, rg))
    }

    /// Inverted dropout: zeroes each element with probability `rate` and scales
    /// survivors by `1 / (1 - rate)`. Identity when `training` is false.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidRate(rate));
        }
        if !training || rate == 0.0 {
            return Ok(input);
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(input).len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let x = self.value(input);
        let value = Tensor::new(x.extents(), x.values().iter().zip(&mask).map(|(&a, &m)| a * m).collect())?;
        let rg = self.needs(&[input]);
        Ok(self.push(value, Op::Dropout { input, mask }, rg))
    }

    fn same_extents(&self, a: Var, b: Var) -> Result<()> {
        if self.value(a).extents() != self.value(b).extents() {
            return Err(mismatch(format!(
                "{:?} vs {:?}",
                self.value(a).extents(),
                self.value(b).extents()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_extents(a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let value = Tensor::new(x.extents(), x.values().iter().zip(y.values()).map(|(&p, &q)| p + q).collect())?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_extents(a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let value = Tensor::new(x.extents(), x.values().iter().zip(y.values()).map(|(&p, &q)| p * q).collect())?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    /// `x · α` with a single-channel `α` broadcast over the channels of `x`.
    pub fn gate_mul(&mut self, x: Var, alpha: Var) -> Result<Var> {
        let lx = self.layout(x)?;
        let la = self.layout(alpha)?;
        if la.c != 1 || la.n != lx.n || la.dims != lx.dims || la.batched != lx.batched {
            return Err(mismatch(format!(
                "gate coefficients {:?} do not broadcast over {:?}",
                self.value(alpha).extents(),
                self.value(x).extents()
            )));
        }
        let sp = lx.spatial();
        let xv = self.value(x).values();
        let av = self.value(alpha).values();
        let mut out = vec![T::zero(); xv.len()];
        for n in 0..lx.n {
            let a = &av[n * sp..][..sp];
            for c in 0..lx.c {
                let off = (n * lx.c + c) * sp;
                for (i, o) in out[off..off + sp].iter_mut().enumerate() {
                    *o = xv[off + i] * a[i];
                }
            }
        }
        let value = Tensor::new(self.value(x).extents(), out)?;
        let rg = self.needs(&[x, alpha]);
        Ok(self.push(value, Op::GateMul { x, alpha, layout: lx }, rg))
    }

    /// Channel concatenation `[a, b]`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let la = self.layout(a)?;
        let lb = self.layout(b)?;
        if la.n != lb.n || la.dims != lb.dims || la.batched != lb.batched {
            return Err(mismatch(format!(
                "cannot concatenate {:?} and {:?}",
                self.value(a).extents(),
                self.value(b).extents()
            )));
        }
        let sp = la.spatial();
        let (a_len, b_len) = (la.c * sp, lb.c * sp);
        let (av, bv) = (self.value(a).values(), self.value(b).values());
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for n in 0..la.n {
            out.extend_from_slice(&av[n * a_len..][..a_len]);
            out.extend_from_slice(&bv[n * b_len..][..b_len]);
        }
        let value = Tensor::new(&la.extents_with(la.c + lb.c, la.dims), out)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Concat { a, b, n: la.n, a_len, b_len }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s: T = self.value(input).values().iter().copied().sum();
        let rg = self.needs(&[input]);
        Ok(self.push(Tensor::scalar(s), Op::Sum { input }, rg))
    }

    /// Soft Tversky loss over the non-background classes `1..C` of `probs`,
    /// averaged over the batch and reduced over classes per `reduction`.
    pub fn soft_tversky_loss(
        &mut self,
        probs: Var,
        target: &Tensor<T>,
        weights: TverskyWeights,
        smooth: f64,
        reduction: ClassReduction,
    ) -> Result<Var> {
        let l = self.layout(probs)?;
        if target.extents() != self.value(probs).extents() {
            return Err(mismatch(format!(
                "target {:?} vs probabilities {:?}",
                target.extents(),
                self.value(probs).extents()
            )));
        }
        if l.c < 2 {
            return Err(mismatch("soft Tversky loss needs at least one foreground class".into()));
        }
        let sp = l.spatial();
        let p = self.value(probs).values();
        let t = target.values();
        let (a, b, s) = (T::from_f64(weights.alpha), T::from_f64(weights.beta), T::from_f64(smooth));
        let mut terms = Vec::with_capacity(l.n * (l.c - 1));
        let mut total = T::zero();
        for n in 0..l.n {
            for c in 1..l.c {
                let off = (n * l.c + c) * sp;
                let (mut tp, mut fneg, mut fpos) = (T::zero(), T::zero(), T::zero());
                for i in off..off + sp {
                    tp += p[i] * t[i];
                    fneg += (T::one() - p[i]) * t[i];
                    fpos += p[i] * (T::one() - t[i]);
                }
                let num = tp + s;
                let den = tp + a * fneg + b * fpos + s;
                terms.push((num, den));
                total += T::one() - num / den;
            }
        }
        let classes = (l.c - 1) as f64;
        let scale = T::from_f64(match reduction {
            ClassReduction::Mean => 1.0 / (l.n as f64 * classes),
            ClassReduction::Sum => 1.0 / l.n as f64,
        });
        let rg = self.needs(&[probs]);
        Ok(self.push(
            Tensor::scalar(total * scale),
            Op::SoftTversky { probs, target: t.to_vec(), layout: l, weights, terms, scale },
            rg,
        ))
    }

    /// Backpropagates from the scalar `loss`, accumulating into every leaf
    /// that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let n = self.value(loss).len();
        if n != 1 {
            return Err(Error::NonScalarLoss(n));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        // Adds `f`'s contribution into the gradient slot of `v` if it needs one.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
            f(slot);
        };
        let val = |v: Var| nodes[v.0].value.values();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv { input, weight, bias, geom } => {
                acc(*input, &mut |gi| {
                    let mut tmp = vec![T::zero(); gi.len()];
                    conv::conv3d_backward_input(geom, g, val(*weight), &mut tmp);
                    add_into(gi, &tmp);
                });
                acc(*weight, &mut |gw| {
                    let mut tmp = vec![T::zero(); gw.len()];
                    conv::conv3d_backward_weight(geom, val(*input), g, &mut tmp);
                    add_into(gw, &tmp);
                });
                if let Some(b) = bias {
                    acc(*b, &mut |gb| {
                        let mut tmp = vec![T::zero(); gb.len()];
                        conv::conv3d_backward_bias(geom, g, &mut tmp);
                        add_into(gb, &tmp);
                    });
                }
            }
            Op::ConvTranspose { input, weight, geom } => {
                // forward was the input-adjoint of `geom`, so the input gradient
                // is the forward convolution and the roles of the weight-gradient
                // operands swap
                acc(*input, &mut |gi| {
                    let mut tmp = vec![T::zero(); gi.len()];
                    conv::conv3d_forward(geom, g, val(*weight), None, &mut tmp);
                    add_into(gi, &tmp);
                });
                acc(*weight, &mut |gw| {
                    let mut tmp = vec![T::zero(); gw.len()];
                    conv::conv3d_backward_weight(geom, g, val(*input), &mut tmp);
                    add_into(gw, &tmp);
                });
            }
            Op::Upsample { input, planes, dims, factor } => {
                acc(*input, &mut |gi| upsample::upsample_backward(*planes, *dims, *factor, g, gi));
            }
            Op::MaxPool { input, planes, in_len, out_len, argmax } => {
                acc(*input, &mut |gi| pool::maxpool_backward(*planes, *in_len, *out_len, argmax, g, gi));
            }
            Op::BatchNormTrain { input, gamma, beta, layout, xhat, inv_std } => {
                let (sp, l) = (layout.spatial(), layout);
                let gam = val(*gamma);
                let mf = T::from_f64((l.n * sp) as f64);
                let mut sum_dy = vec![T::zero(); l.c];
                let mut sum_dy_xhat = vec![T::zero(); l.c];
                for_each_channel(l, |c, off| {
                    for j in off..off + sp {
                        sum_dy[c] += g[j];
                        sum_dy_xhat[c] += g[j] * xhat[j];
                    }
                });
                acc(*input, &mut |gi| {
                    for_each_channel(l, |c, off| {
                        let k = gam[c] * inv_std[c] / mf;
                        for j in off..off + sp {
                            gi[j] += k * (mf * g[j] - sum_dy[c] - xhat[j] * sum_dy_xhat[c]);
                        }
                    })
                });
                acc(*gamma, &mut |gg| add_into(gg, &sum_dy_xhat));
                acc(*beta, &mut |gb| add_into(gb, &sum_dy));
            }
            Op::BatchNormEval { input, gamma, beta, layout, xhat, inv_std } => {
                let (sp, l) = (layout.spatial(), layout);
                let gam = val(*gamma);
                let mut sum_dy = vec![T::zero(); l.c];
                let mut sum_dy_xhat = vec![T::zero(); l.c];
                for_each_channel(l, |c, off| {
                    for j in off..off + sp {
                        sum_dy[c] += g[j];
                        sum_dy_xhat[c] += g[j] * xhat[j];
                    }
                });
                acc(*input, &mut |gi| {
                    for_each_channel(l, |c, off| {
                        let k = gam[c] * inv_std[c];
                        for j in off..off + sp {
                            gi[j] += k * g[j];
                        }
                    })
                });
                acc(*gamma, &mut |gg| add_into(gg, &sum_dy_xhat));
                acc(*beta, &mut |gb| add_into(gb, &sum_dy));
            }
            Op::LeakyRelu { input, slope } => {
                let x = val(*input);
                acc(*input, &mut |gi| {
                    for ((d, &gv), &xv) in gi.iter_mut().zip(g).zip(x) {
                        *d += if xv > T::zero() { gv } else { gv * *slope };
                    }
                });
            }
            Op::Sigmoid { input } => {
                let y = nodes[i].value.values();
                acc(*input, &mut |gi| {
                    for ((d, &gv), &yv) in gi.iter_mut().zip(g).zip(y) {
                        *d += gv * yv * (T::one() - yv);
                    }
                });
            }
            Op::Softmax { input, layout } => {
                let y = nodes[i].value.values();
                let sp = layout.spatial();
                acc(*input, &mut |gi| {
                    for n in 0..layout.n {
                        let base = n * layout.c * sp;
                        for v in 0..sp {
                            let dot: T = (0..layout.c).map(|c| g[base + c * sp + v] * y[base + c * sp + v]).sum();
                            for c in 0..layout.c {
                                let j = base + c * sp + v;
                                gi[j] += y[j] * (g[j] - dot);
                            }
                        }
                    }
                });
            }
            Op::Dropout { input, mask } => {
                acc(*input, &mut |gi| {
                    for ((d, &gv), &m) in gi.iter_mut().zip(g).zip(mask) {
                        *d += gv * m;
                    }
                });
            }
            Op::Add { a, b } => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for ((d, &gv), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((d, &gv), &x) in gb.iter_mut().zip(g).zip(av) {
                        *d += gv * x;
                    }
                });
            }
            Op::GateMul { x, alpha, layout } => {
                let sp = layout.spatial();
                let (xv, av) = (val(*x), val(*alpha));
                acc(*x, &mut |gx| {
                    for n in 0..layout.n {
                        for c in 0..layout.c {
                            let off = (n * layout.c + c) * sp;
                            for j in 0..sp {
                                gx[off + j] += g[off + j] * av[n * sp + j];
                            }
                        }
                    }
                });
                acc(*alpha, &mut |ga| {
                    for n in 0..layout.n {
                        for c in 0..layout.c {
                            let off = (n * layout.c + c) * sp;
                            for j in 0..sp {
                                ga[n * sp + j] += g[off + j] * xv[off + j];
                            }
                        }
                    }
                });
            }
            Op::Concat { a, b, n, a_len, b_len } => {
                let stride = a_len + b_len;
                acc(*a, &mut |ga| {
                    for k in 0..*n {
                        add_into(&mut ga[k * a_len..][..*a_len], &g[k * stride..][..*a_len]);
                    }
                });
                acc(*b, &mut |gb| {
                    for k in 0..*n {
                        add_into(&mut gb[k * b_len..][..*b_len], &g[k * stride + a_len..][..*b_len]);
                    }
                });
            }
            Op::Sum { input } => {
                acc(*input, &mut |gi| gi.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::SoftTversky { probs, target, layout, weights, terms, scale } => {
                let sp = layout.spatial();
                let (a, b) = (T::from_f64(weights.alpha), T::from_f64(weights.beta));
                acc(*probs, &mut |gp| {
                    let mut k = 0;
                    for n in 0..layout.n {
                        for c in 1..layout.c {
                            let (num, den) = terms[k];
                            k += 1;
                            // d(1 - num/den)/dp = -(dnum·den - num·dden)/den²
                            let coef = -g[0] * *scale / (den * den);
                            let off = (n * layout.c + c) * sp;
                            for j in off..off + sp {
                                let t = target[j];
                                let dden = t - a * t + b * (T::one() - t);
                                gp[j] += coef * (t * den - num * dden);
                            }
                        }
                    }
                });
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn for_each_channel(l: &Layout5, mut f: impl FnMut(usize, usize)) {
    let sp = l.spatial();
    for n in 0..l.n {
        for c in 0..l.c {
            f(c, (n * l.c + c) * sp);
        }
    }
}

/// Logistic function clamped to `[min_positive, 1 - ε/2]`.
pub fn sigmoid<T: Real>(x: T) -> T {
    let y = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let hi = T::one() - T::epsilon() / T::from_f64(2.0);
    y.max(T::min_positive_value()).min(hi)
}
