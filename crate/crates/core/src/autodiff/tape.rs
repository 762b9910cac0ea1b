//! Operation tape and reverse pass.
//!
//! Every differentiable op appends a node holding its output value, the ids
//! of its inputs and whatever it needs for the backward rule. Nodes are only
//! ever appended, so inputs always precede their consumers and the reverse
//! pass is a single backwards sweep.

use super::kernels::{col2im, im2col, ConvGeom};
use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use super::AutodiffError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

pub const BN_EPS: f64 = 1e-5;
pub const BCE_CLAMP: f64 = 1e-7;
pub const NORMALIZE_FLOOR: f64 = 1e-8;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var, batched: bool },
    TransposeLast2(Var),
    Softmax(Var),
    MaxPool2 { x: Var, argmax: Vec<u32> },
    GlobalAvgPool(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, inv_std: Vec<T>, train: bool },
    Concat { parts: Vec<Var>, axis: usize },
    ToTokens(Var),
    FromTokens(Var),
    L1Normalize { x: Var, fallback: Vec<bool> },
    Bce { pred: Var, target: Vec<T> },
    Mse(Var, Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Batch statistics computed by a training-mode batch-norm node.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, the convention used for running averages.
    pub var_unbiased: Vec<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::ShapeMismatch(msg.into())
}

fn add_into<T: Scalar>(slot: &mut Option<Vec<T>>, delta: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
        None => *slot = Some(delta),
    }
}

/// `(batch, channels, spatial)` view of a rank-2 `[N, C]` or rank-4
/// `[N, C, H, W]` shape.
fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize), AutodiffError> {
    match shape {
        [n, c] => Ok((*n, *c, 1)),
        [n, c, h, w] => Ok((*n, *c, h * w)),
        _ => Err(mismatch(format!("expected [N,C] or [N,C,H,W], got {shape:?}"))),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), leaf_grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated on a leaf created with `requires_grad`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Places a copy of a stored parameter on the tape. Frozen parameters
    /// enter as constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId, frozen: bool) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), !frozen && p.trainable)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let f = T::cst(factor);
        let data = self.value(a).data().iter().map(|&x| x * f).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, f), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| sigmoid(x)).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s / T::cst(n as f64)), Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let value = self.value(a).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Cross-correlation with zero padding. `x: [N, Cin, H, W]`,
    /// `w: [Cout, Cin, kh, kw]`, `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var, AutodiffError> {
        let (n, g, cout) = self.conv_geom(x, w, b, stride, pad)?;
        let k = g.rows();
        let (in_sz, out_sz) = (g.c * g.h * g.w, cout * g.cols());
        let mut out = vec![T::zero(); n * out_sz];
        let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { k * g.cols() }];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for i in 0..n {
                let xi = &xv[i * in_sz..(i + 1) * in_sz];
                let src: &[T] = if g.is_pointwise() {
                    xi
                } else {
                    im2col(xi, &g, &mut cols);
                    &cols
                };
                T::gemm(cout, k, g.cols(), wv, false, src, false, T::zero(), &mut out[i * out_sz..(i + 1) * out_sz]);
            }
            if let Some(b) = b {
                add_channel_bias(&mut out, self.value(b).data(), n, cout, g.cols());
            }
        }
        let value = Tensor::new(vec![n, cout, g.out_h, g.out_w], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::Conv2d { x, w, b, stride, pad }, rg))
    }

    fn conv_geom(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<(usize, ConvGeom, usize), AutodiffError> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let ([n, cin, h, wd], [cout, wcin, kh, kw]) = (xs, ws) else {
            return Err(mismatch(format!("conv2d expects rank-4 input and weight, got {xs:?}, {ws:?}")));
        };
        if cin != wcin || stride == 0 || h + 2 * pad < *kh || wd + 2 * pad < *kw {
            return Err(mismatch(format!("conv2d input {xs:?} incompatible with weight {ws:?} (stride {stride}, pad {pad})")));
        }
        if let Some(b) = b {
            if self.shape(b) != [*cout] {
                return Err(mismatch(format!("conv2d bias {:?} for {cout} outputs", self.shape(b))));
            }
        }
        let g = ConvGeom {
            c: *cin,
            h: *h,
            w: *wd,
            kh: *kh,
            kw: *kw,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (wd + 2 * pad - kw) / stride + 1,
        };
        Ok((*n, g, *cout))
    }

    /// Transposed convolution (the adjoint of `conv2d`). `x: [N, Cin, H, W]`,
    /// `w: [Cin, Cout, kh, kw]`; output side `(H - 1)·stride - 2·pad + kh`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, AutodiffError> {
        let (n, g, cin) = self.convt_geom(x, w, b, stride, pad)?;
        let k = g.rows();
        let (in_sz, out_sz) = (cin * g.cols(), g.c * g.h * g.w);
        let mut out = vec![T::zero(); n * out_sz];
        let mut cols = vec![T::zero(); k * g.cols()];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for i in 0..n {
                T::gemm(k, cin, g.cols(), wv, true, &xv[i * in_sz..(i + 1) * in_sz], false, T::zero(), &mut cols);
                col2im(&cols, &g, &mut out[i * out_sz..(i + 1) * out_sz]);
            }
            if let Some(b) = b {
                add_channel_bias(&mut out, self.value(b).data(), n, g.c, g.h * g.w);
            }
        }
        let value = Tensor::new(vec![n, g.c, g.h, g.w], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, stride, pad }, rg))
    }

    /// Geometry where the "image" side is the transposed conv's output.
    fn convt_geom(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<(usize, ConvGeom, usize), AutodiffError> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let ([n, cin, h, wd], [wcin, cout, kh, kw]) = (xs, ws) else {
            return Err(mismatch(format!("conv_transpose2d expects rank-4 tensors, got {xs:?}, {ws:?}")));
        };
        let oh = ((h - 1) * stride + kh).checked_sub(2 * pad);
        let ow = ((wd - 1) * stride + kw).checked_sub(2 * pad);
        if cin != wcin || stride == 0 || oh.is_none_or(|v| v == 0) || ow.is_none_or(|v| v == 0) {
            return Err(mismatch(format!("conv_transpose2d input {xs:?} incompatible with weight {ws:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [*cout] {
                return Err(mismatch(format!("conv_transpose2d bias {:?} for {cout} outputs", self.shape(b))));
            }
        }
        let g = ConvGeom {
            c: *cout,
            h: oh.unwrap_or_default(),
            w: ow.unwrap_or_default(),
            kh: *kh,
            kw: *kw,
            stride,
            pad,
            out_h: *h,
            out_w: *wd,
        };
        Ok((*n, g, *cin))
    }

    /// `x: [N, in]`, `w: [out, in]`, `b: [out]` → `x·wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, AutodiffError> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let ([n, fin], [fout, win]) = (xs, ws) else {
            return Err(mismatch(format!("linear expects [N,in] and [out,in], got {xs:?}, {ws:?}")));
        };
        let (n, fin, fout) = (*n, *fin, *fout);
        if fin != *win {
            return Err(mismatch(format!("linear input {xs:?} vs weight {ws:?}")));
        }
        let mut out = vec![T::zero(); n * fout];
        T::gemm(n, fin, fout, self.value(x).data(), false, self.value(w).data(), true, T::zero(), &mut out);
        if let Some(b) = b {
            if self.shape(b) != [fout] {
                return Err(mismatch(format!("linear bias {:?} for {fout} outputs", self.shape(b))));
            }
            let bv = self.value(b).data();
            out.chunks_exact_mut(fout).for_each(|row| row.iter_mut().zip(bv).for_each(|(o, &bb)| *o += bb));
        }
        let value = Tensor::new(vec![n, fout], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    /// Matrix product. Either `a: [.., m, k]` with a shared `b: [k, n]`, or
    /// batched `a: [B, m, k]`, `b: [B, k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (as_, bs) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if as_.len() < 2 {
            return Err(mismatch(format!("matmul lhs must be at least rank 2, got {as_:?}")));
        }
        let (m, k) = (as_[as_.len() - 2], as_[as_.len() - 1]);
        let (batched, batch, n) = match bs.as_slice() {
            [bk, bn] if *bk == k => (false, as_[..as_.len() - 1].iter().product::<usize>() / m, *bn),
            [bb, bk, bn] if as_.len() == 3 && *bb == as_[0] && *bk == k => (true, *bb, *bn),
            _ => return Err(mismatch(format!("matmul {as_:?} x {bs:?}"))),
        };
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            if batched {
                for i in 0..batch {
                    T::gemm(
                        m,
                        k,
                        n,
                        &av[i * m * k..],
                        false,
                        &bv[i * k * n..],
                        false,
                        T::zero(),
                        &mut out[i * m * n..(i + 1) * m * n],
                    );
                }
            } else {
                T::gemm(batch * m, k, n, av, false, bv, false, T::zero(), &mut out);
            }
        }
        let mut shape = as_.clone();
        *shape.last_mut().expect("rank >= 2") = n;
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul { a, b, batched }, rg))
    }

    pub fn transpose_last2(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(mismatch(format!("transpose needs rank >= 2, got {s:?}")));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let data = transpose_blocks(self.value(a).data(), r, c);
        let mut shape = s.clone();
        let l = shape.len();
        shape.swap(l - 2, l - 1);
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::TransposeLast2(a), rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let d = *self.shape(a).last().expect("non-empty shape");
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_exact_mut(d) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v = *v / z);
        }
        let value = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Softmax(a), rg)
    }

    /// 2×2 max pooling with stride 2 (odd trailing rows/columns dropped).
    pub fn max_pool2(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let &[n, c, h, w] = self.shape(x) else {
            return Err(mismatch(format!("max_pool2 expects [N,C,H,W], got {:?}", self.shape(x))));
        };
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(mismatch(format!("max_pool2 input {h}x{w} too small")));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xv[idx] > xv[best] {
                            best = idx;
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MaxPool2 { x, argmax }, rg))
    }

    /// `[N, C, H, W]` → `[N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let &[n, c, h, w] = self.shape(x) else {
            return Err(mismatch(format!("global_avg_pool expects [N,C,H,W], got {:?}", self.shape(x))));
        };
        let hw = h * w;
        let inv = T::cst(1.0 / hw as f64);
        let out = self.value(x).data().chunks_exact(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let value = Tensor::new(vec![n, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::GlobalAvgPool(x), rg))
    }

    /// Training-mode batch norm over `[N, C]` or `[N, C, H, W]`: normalizes
    /// with the batch statistics and reports them for running averages.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats<T>), AutodiffError> {
        let (n, c, hw) = channel_layout(self.shape(x))?;
        let m = n * hw;
        if m < 2 {
            return Err(mismatch("batch norm in training mode needs at least 2 values per channel"));
        }
        let xv = self.value(x).data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for i in 0..n {
                s += xv[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().copied().sum::<T>();
            }
            let mu = s / T::cst(m as f64);
            let mut ss = T::zero();
            for i in 0..n {
                for &v in &xv[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                    ss += (v - mu) * (v - mu);
                }
            }
            mean[ch] = mu;
            var[ch] = ss / T::cst(m as f64);
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::cst(BN_EPS)).sqrt()).collect();
        let stats = BatchStats {
            mean: mean.clone(),
            var_unbiased: var.iter().map(|&v| v * T::cst(m as f64 / (m - 1) as f64)).collect(),
        };
        let out = self.bn_apply(x, gamma, beta, &mean, &inv_std, true)?;
        Ok((out, stats))
    }

    /// Inference-mode batch norm with fixed statistics (an affine map).
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
    ) -> Result<Var, AutodiffError> {
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + T::cst(BN_EPS)).sqrt()).collect();
        self.bn_apply(x, gamma, beta, running_mean, &inv_std, false)
    }

    fn bn_apply(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], inv_std: &[T], train: bool) -> Result<Var, AutodiffError> {
        let (n, c, hw) = channel_layout(self.shape(x))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || mean.len() != c || inv_std.len() != c {
            return Err(mismatch(format!("batch norm affine parameters do not match {c} channels")));
        }
        let (xv, gv, bv) = (self.value(x).data(), self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![T::zero(); xv.len()];
        for i in 0..n {
            for ch in 0..c {
                let (s, e) = ((i * c + ch) * hw, (i * c + ch + 1) * hw);
                let (a, m) = (gv[ch] * inv_std[ch], mean[ch]);
                for (o, &v) in out[s..e].iter_mut().zip(&xv[s..e]) {
                    *o = (v - m) * a + bv[ch];
                }
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let op = Op::BatchNorm { x, gamma, beta, mean: mean.to_vec(), inv_std: inv_std.to_vec(), train };
        Ok(self.push(value, op, rg))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = self.shape(*parts.first().ok_or_else(|| mismatch("concat of nothing"))?).to_vec();
        if axis >= first.len() {
            return Err(mismatch(format!("concat axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(mismatch(format!("concat {first:?} with {s:?} along {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::Concat { parts: parts.to_vec(), axis }, rg))
    }

    /// `[N, C, H, W]` → `[N, H·W, C]` token layout.
    pub fn to_tokens(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let &[n, c, h, w] = self.shape(x) else {
            return Err(mismatch(format!("to_tokens expects [N,C,H,W], got {:?}", self.shape(x))));
        };
        let mut out = Vec::with_capacity(n * c * h * w);
        for i in 0..n {
            out.extend(transpose_blocks(&self.value(x).data()[i * c * h * w..(i + 1) * c * h * w], c, h * w));
        }
        let value = Tensor::new(vec![n, h * w, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::ToTokens(x), rg))
    }

    /// `[N, H·W, C]` → `[N, C, H, W]`.
    pub fn from_tokens(&mut self, x: Var, h: usize, w: usize) -> Result<Var, AutodiffError> {
        let &[n, t, c] = self.shape(x) else {
            return Err(mismatch(format!("from_tokens expects [N,T,C], got {:?}", self.shape(x))));
        };
        if t != h * w {
            return Err(mismatch(format!("{t} tokens cannot form {h}x{w}")));
        }
        let mut out = Vec::with_capacity(n * t * c);
        for i in 0..n {
            out.extend(transpose_blocks(&self.value(x).data()[i * t * c..(i + 1) * t * c], t, c));
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::FromTokens(x), rg))
    }

    /// Divides each row (last axis) by its L1 norm. Rows with norm below
    /// [`NORMALIZE_FLOOR`] become uniform and pass no gradient.
    pub fn l1_normalize(&mut self, x: Var) -> Var {
        let d = *self.shape(x).last().expect("non-empty shape");
        let mut data = self.value(x).data().to_vec();
        let mut fallback = Vec::with_capacity(data.len() / d);
        for row in data.chunks_exact_mut(d) {
            let norm: T = row.iter().map(|v| v.abs()).sum();
            if norm < T::cst(NORMALIZE_FLOOR) {
                row.iter_mut().for_each(|v| *v = T::cst(1.0 / d as f64));
                fallback.push(true);
            } else {
                row.iter_mut().for_each(|v| *v = *v / norm);
                fallback.push(false);
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::L1Normalize { x, fallback }, rg)
    }

    /// Mean binary cross-entropy of probabilities against `{0,1}` targets;
    /// predictions are clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce_loss(&mut self, pred: Var, target: &[T]) -> Result<Var, AutodiffError> {
        let pv = self.value(pred).data();
        if pv.len() != target.len() {
            return Err(mismatch(format!("bce: {} predictions, {} targets", pv.len(), target.len())));
        }
        let (lo, hi) = (T::cst(BCE_CLAMP), T::one() - T::cst(BCE_CLAMP));
        let mut total = T::zero();
        for (&p, &t) in pv.iter().zip(target) {
            let p = p.max(lo).min(hi);
            total -= t * p.ln() + (T::one() - t) * (T::one() - p).ln();
        }
        let loss = total / T::cst(pv.len() as f64);
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(loss), Op::Bce { pred, target: target.to_vec() }, rg))
    }

    /// Mean of squared differences.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "mse")?;
        let n = self.value(a).numel();
        let s: T = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(s / T::cst(n as f64)), Op::Mse(a, b), rg))
    }

    /// Reverse pass from a one-element `loss`. Leaf gradients accumulate on
    /// the tape across calls; parameter gradients are returned for the caller
    /// to accumulate into its store.
    pub fn backward(&mut self, loss: Var) -> Result<ParamGrads<T>, AutodiffError> {
        if self.value(loss).numel() != 1 {
            return Err(AutodiffError::NotScalar(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut params = ParamGrads::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            match &self.nodes[i].op {
                Op::Leaf => add_into(&mut self.leaf_grads[i], g),
                Op::Param(id) => params.0.push((*id, g)),
                op => self.backprop(i, op, g, &mut grads)?,
            }
        }
        // several tape nodes may refer to one parameter
        params.0.sort_by_key(|(id, _)| *id);
        let mut merged: Vec<(ParamId, Vec<T>)> = Vec::new();
        for (id, g) in params.0 {
            match merged.last_mut() {
                Some((last, acc)) if *last == id => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                _ => merged.push((id, g)),
            }
        }
        Ok(ParamGrads(merged))
    }

    fn backprop(&self, i: usize, op: &Op<T>, g: Vec<T>, grads: &mut [Option<Vec<T>>]) -> Result<(), AutodiffError> {
        let out = &self.nodes[i].value;
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut send = |v: Var, delta: Vec<T>| {
            if self.rg(v) {
                add_into(&mut grads[v.0], delta);
            }
        };
        match op {
            Op::Leaf | Op::Param(_) => unreachable!("leaves are handled by the caller"),
            Op::Add(a, b) => {
                send(*b, g.clone());
                send(*a, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                send(*a, g.iter().zip(bv).map(|(&d, &y)| d * y).collect());
                send(*b, g.iter().zip(av).map(|(&d, &x)| d * x).collect());
            }
            Op::Scale(a, f) => send(*a, g.iter().map(|&d| d * *f).collect()),
            Op::Relu(a) => send(*a, g.iter().zip(out.data()).map(|(&d, &y)| if y > T::zero() { d } else { T::zero() }).collect()),
            Op::Sigmoid(a) => send(*a, g.iter().zip(out.data()).map(|(&d, &y)| d * y * (T::one() - y)).collect()),
            Op::Sum(a) => send(*a, vec![g[0]; self.nodes[a.0].value.numel()]),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel();
                send(*a, vec![g[0] / T::cst(n as f64); n]);
            }
            Op::Reshape(a) => send(*a, g),
            Op::Conv2d { x, w, b, stride, pad } => {
                let (n, geom, cout) = self.conv_geom(*x, *w, *b, *stride, *pad)?;
                let k = geom.rows();
                let (in_sz, out_sz) = (geom.c * geom.h * geom.w, cout * geom.cols());
                let (xv, wv) = (val(*x), val(*w));
                let mut dw = vec![T::zero(); cout * k];
                let mut dx = if self.rg(*x) { vec![T::zero(); n * in_sz] } else { Vec::new() };
                let mut cols = vec![T::zero(); k * geom.cols()];
                for s in 0..n {
                    let gs = &g[s * out_sz..(s + 1) * out_sz];
                    if self.rg(*w) {
                        let xi = &xv[s * in_sz..(s + 1) * in_sz];
                        let src: &[T] = if geom.is_pointwise() {
                            xi
                        } else {
                            im2col(xi, &geom, &mut cols);
                            &cols
                        };
                        T::gemm(cout, geom.cols(), k, gs, false, src, true, T::one(), &mut dw);
                    }
                    if self.rg(*x) {
                        let dxs = &mut dx[s * in_sz..(s + 1) * in_sz];
                        if geom.is_pointwise() {
                            T::gemm(k, cout, geom.cols(), wv, true, gs, false, T::zero(), dxs);
                        } else {
                            T::gemm(k, cout, geom.cols(), wv, true, gs, false, T::zero(), &mut cols);
                            col2im(&cols, &geom, dxs);
                        }
                    }
                }
                if let Some(b) = b {
                    send(*b, channel_sums(&g, n, cout, geom.cols()));
                }
                send(*w, dw);
                if self.rg(*x) {
                    send(*x, dx);
                }
            }
            Op::ConvTranspose2d { x, w, b, stride, pad } => {
                let (n, geom, cin) = self.convt_geom(*x, *w, *b, *stride, *pad)?;
                let k = geom.rows();
                let (in_sz, out_sz) = (cin * geom.cols(), geom.c * geom.h * geom.w);
                let (xv, wv) = (val(*x), val(*w));
                let mut dw = vec![T::zero(); cin * k];
                let mut dx = vec![T::zero(); n * in_sz];
                let mut cols = vec![T::zero(); k * geom.cols()];
                for s in 0..n {
                    im2col(&g[s * out_sz..(s + 1) * out_sz], &geom, &mut cols);
                    if self.rg(*x) {
                        T::gemm(cin, k, geom.cols(), wv, false, &cols, false, T::zero(), &mut dx[s * in_sz..(s + 1) * in_sz]);
                    }
                    if self.rg(*w) {
                        T::gemm(cin, geom.cols(), k, &xv[s * in_sz..(s + 1) * in_sz], false, &cols, true, T::one(), &mut dw);
                    }
                }
                if let Some(b) = b {
                    send(*b, channel_sums(&g, n, geom.c, geom.h * geom.w));
                }
                send(*w, dw);
                send(*x, dx);
            }
            Op::Linear { x, w, b } => {
                let [n, fin] = *self.shape(*x) else { unreachable!() };
                let fout = self.shape(*w)[0];
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); n * fin];
                    T::gemm(n, fout, fin, &g, false, val(*w), false, T::zero(), &mut dx);
                    send(*x, dx);
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); fout * fin];
                    T::gemm(fout, n, fin, &g, true, val(*x), false, T::zero(), &mut dw);
                    send(*w, dw);
                }
                if let Some(b) = b {
                    send(*b, channel_sums(&g, n, fout, 1));
                }
            }
            Op::MatMul { a, b, batched } => {
                let as_ = self.shape(*a);
                let (m, k) = (as_[as_.len() - 2], as_[as_.len() - 1]);
                let n = *self.shape(*b).last().expect("rank >= 2");
                let (av, bv) = (val(*a), val(*b));
                let mut da = vec![T::zero(); av.len()];
                let mut db = vec![T::zero(); bv.len()];
                if *batched {
                    let batch = as_[0];
                    for s in 0..batch {
                        let gs = &g[s * m * n..(s + 1) * m * n];
                        T::gemm(m, n, k, gs, false, &bv[s * k * n..], true, T::zero(), &mut da[s * m * k..(s + 1) * m * k]);
                        T::gemm(k, m, n, &av[s * m * k..], true, gs, false, T::zero(), &mut db[s * k * n..(s + 1) * k * n]);
                    }
                } else {
                    let rows = av.len() / k;
                    T::gemm(rows, n, k, &g, false, bv, true, T::zero(), &mut da);
                    T::gemm(k, rows, n, av, true, &g, false, T::zero(), &mut db);
                }
                send(*a, da);
                send(*b, db);
            }
            Op::TransposeLast2(a) => {
                let s = out.shape();
                send(*a, transpose_blocks(&g, s[s.len() - 2], s[s.len() - 1]));
            }
            Op::Softmax(a) => {
                let d = *out.shape().last().expect("non-empty");
                let mut dx = vec![T::zero(); g.len()];
                for ((dxr, gr), yr) in dx.chunks_exact_mut(d).zip(g.chunks_exact(d)).zip(out.data().chunks_exact(d)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((o, &gg), &y) in dxr.iter_mut().zip(gr).zip(yr) {
                        *o = y * (gg - dot);
                    }
                }
                send(*a, dx);
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = vec![T::zero(); self.nodes[x.0].value.numel()];
                for (&idx, &d) in argmax.iter().zip(&g) {
                    dx[idx as usize] += d;
                }
                send(*x, dx);
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x);
                let hw = s[2] * s[3];
                let inv = T::cst(1.0 / hw as f64);
                let mut dx = Vec::with_capacity(g.len() * hw);
                for &d in &g {
                    dx.extend(std::iter::repeat_n(d * inv, hw));
                }
                send(*x, dx);
            }
            Op::BatchNorm { x, gamma, beta, mean, inv_std, train } => {
                let (n, c, hw) = channel_layout(self.shape(*x))?;
                let (xv, gv) = (val(*x), val(*gamma));
                let m = T::cst((n * hw) as f64);
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); xv.len()];
                for ch in 0..c {
                    let (mu, is) = (mean[ch], inv_std[ch]);
                    let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
                    for s in 0..n {
                        let r = (s * c + ch) * hw..(s * c + ch + 1) * hw;
                        for (&d, &v) in g[r.clone()].iter().zip(&xv[r]) {
                            sum_g += d;
                            sum_gx += d * (v - mu) * is;
                        }
                    }
                    dgamma[ch] = sum_gx;
                    dbeta[ch] = sum_g;
                    let a = gv[ch] * is;
                    for s in 0..n {
                        let r = (s * c + ch) * hw..(s * c + ch + 1) * hw;
                        for ((o, &d), &v) in dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xv[r]) {
                            *o = if *train {
                                let xhat = (v - mu) * is;
                                a * (d - sum_g / m - xhat * sum_gx / m)
                            } else {
                                a * d
                            };
                        }
                    }
                }
                send(*x, dx);
                send(*gamma, dgamma);
                send(*beta, dbeta);
            }
            Op::Concat { parts, axis } => {
                let shape = out.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = self.shape(p)[*axis] * inner;
                    let mut dp = Vec::with_capacity(outer * chunk);
                    for o in 0..outer {
                        dp.extend_from_slice(&g[o * total + offset..o * total + offset + chunk]);
                    }
                    offset += chunk;
                    send(p, dp);
                }
            }
            Op::ToTokens(x) => {
                let &[n, c, h, w] = self.shape(*x) else { unreachable!() };
                let per = c * h * w;
                let mut dx = Vec::with_capacity(g.len());
                for s in 0..n {
                    dx.extend(transpose_blocks(&g[s * per..(s + 1) * per], h * w, c));
                }
                send(*x, dx);
            }
            Op::FromTokens(x) => {
                let &[n, t, c] = self.shape(*x) else { unreachable!() };
                let per = t * c;
                let mut dx = Vec::with_capacity(g.len());
                for s in 0..n {
                    dx.extend(transpose_blocks(&g[s * per..(s + 1) * per], c, t));
                }
                send(*x, dx);
            }
            Op::L1Normalize { x, fallback } => {
                let d = *out.shape().last().expect("non-empty");
                let xv = val(*x);
                let mut dx = vec![T::zero(); xv.len()];
                for (r, &fb) in fallback.iter().enumerate() {
                    if fb {
                        continue;
                    }
                    let (xr, gr) = (&xv[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                    let norm: T = xr.iter().map(|v| v.abs()).sum();
                    let dot: T = xr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..d {
                        let sign = if xr[j] > T::zero() {
                            T::one()
                        } else if xr[j] < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        dx[r * d + j] = gr[j] / norm - sign * dot / (norm * norm);
                    }
                }
                send(*x, dx);
            }
            Op::Bce { pred, target } => {
                let pv = val(*pred);
                let n = T::cst(pv.len() as f64);
                let (lo, hi) = (T::cst(BCE_CLAMP), T::one() - T::cst(BCE_CLAMP));
                let dp = pv
                    .iter()
                    .zip(target)
                    .map(|(&p, &t)| {
                        if p < lo || p > hi {
                            T::zero()
                        } else {
                            g[0] * (-t / p + (T::one() - t) / (T::one() - p)) / n
                        }
                    })
                    .collect();
                send(*pred, dp);
            }
            Op::Mse(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let f = g[0] * T::cst(2.0 / av.len() as f64);
                let da: Vec<T> = av.iter().zip(bv).map(|(&x, &y)| f * (x - y)).collect();
                send(*b, da.iter().map(|&v| -v).collect());
                send(*a, da);
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], n: usize, c: usize, hw: usize) {
    for s in 0..n {
        for (ch, &b) in bias.iter().enumerate().take(c) {
            out[(s * c + ch) * hw..(s * c + ch + 1) * hw].iter_mut().for_each(|v| *v += b);
        }
    }
}

fn channel_sums<T: Scalar>(g: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for s in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            *o += g[(s * c + ch) * hw..(s * c + ch + 1) * hw].iter().copied().sum::<T>();
        }
    }
    out
}

/// Transposes each consecutive `r × c` block of `data`.
fn transpose_blocks<T: Scalar>(data: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for (src, dst) in data.chunks_exact(r * c).zip(out.chunks_exact_mut(r * c)) {
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    out
}
