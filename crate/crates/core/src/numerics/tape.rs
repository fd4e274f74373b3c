//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles. Image
//! tensors use a channel-major `[channels, batch, height, width]` layout so
//! channel concatenation is contiguous and a 3×3 convolution over the whole
//! batch becomes one GEMM.

use super::linalg::{col2im, gemm, im2col};
use crate::error::{shape_mismatch, Error, Result};

/// Dense row-major tensor of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_mismatch(&shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    BroadcastAdd(Var, Var),
    Conv3x3 {
        x: Var,
        w: Var,
        b: Var,
        cols: Vec<f64>,
        planes: usize,
        h: usize,
        width: usize,
    },
    AvgPool2(Var),
    Upsample2(Var),
    Concat(Vec<Var>),
    MatMul(Var, Var),
    Reshape(Var),
    SwapInner(Var),
    Mse(Var, Var),
    Pinball {
        pred: Var,
        target: Var,
        levels: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation graph recorder.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records values only; `backward` on it is an error.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copy of `v` with no gradient path back.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_mismatch(self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| f(*x, *y)).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor { shape, data }, op, &[a, b]))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data = self.data(a).iter().map(|x| f(*x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor { shape, data }, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("same shape")
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let s = d.iter().sum::<f64>() / d.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// `x + b` where `b`'s shape is a leading prefix of `x`'s shape.
    pub fn broadcast_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x), self.shape(b));
        if bs.len() > xs.len() || xs[..bs.len()] != *bs {
            return Err(shape_mismatch(xs, bs));
        }
        let inner: usize = xs[bs.len()..].iter().product();
        let bd = self.data(b);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bd[i / inner.max(1)])
            .collect();
        let shape = xs.to_vec();
        Ok(self.push(Tensor { shape, data }, Op::BroadcastAdd(x, b), &[x, b]))
    }

    /// 3×3 convolution, stride 1, zero "same" padding.
    ///
    /// `x`: [c_in, batch, h, w]; `w`: [c_out, c_in·9]; `b`: [c_out].
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(shape_mismatch(&[0, 0, 0, 0], &xs));
        }
        let (ci, planes, h, width) = (xs[0], xs[1], xs[2], xs[3]);
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || ws[1] != ci * 9 {
            return Err(shape_mismatch(&[ws.first().copied().unwrap_or(0), ci * 9], &ws));
        }
        let co = ws[0];
        if self.shape(b) != [co] {
            return Err(shape_mismatch(&[co], self.shape(b)));
        }
        let p = planes * h * width;
        let cols = im2col(self.data(x), ci, planes, h, width);
        let mut out = vec![0.0; co * p];
        gemm(co, ci * 9, p, self.data(w), false, &cols, false, 0.0, &mut out);
        for (o, bias) in out.chunks_exact_mut(p).zip(self.data(b)) {
            o.iter_mut().for_each(|v| *v += bias);
        }
        let keep = self.grad_enabled && self.nodes[w.0].requires_grad | self.nodes[x.0].requires_grad;
        let op = Op::Conv3x3 {
            x,
            w,
            b,
            cols: if keep { cols } else { Vec::new() },
            planes,
            h,
            width,
        };
        Ok(self.push(Tensor::new(vec![co, planes, h, width], out)?, op, &[x, w, b]))
    }

    /// 2×2 average pooling over the trailing two axes.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        if s.len() < 2 || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "pooling needs even spatial dims, got {h}x{w}"
            )));
        }
        let lead: usize = s[..s.len() - 2].iter().product();
        let (h2, w2) = (h / 2, w / 2);
        let d = self.data(x);
        let mut out = vec![0.0; lead * h2 * w2];
        for l in 0..lead {
            let src = &d[l * h * w..][..h * w];
            let dst = &mut out[l * h2 * w2..][..h2 * w2];
            for y in 0..h2 {
                for xx in 0..w2 {
                    let i = 2 * y * w + 2 * xx;
                    dst[y * w2 + xx] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
                }
            }
        }
        let mut shape = s.clone();
        let n = shape.len();
        shape[n - 2] = h2;
        shape[n - 1] = w2;
        Ok(self.push(Tensor { shape, data: out }, Op::AvgPool2(x), &[x]))
    }

    /// Nearest-neighbour ×2 upsampling over the trailing two axes.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let n = s.len();
        let (h, w) = (s[n - 2], s[n - 1]);
        let lead: usize = s[..n - 2].iter().product();
        let d = self.data(x);
        let mut out = vec![0.0; lead * 4 * h * w];
        for l in 0..lead {
            let src = &d[l * h * w..][..h * w];
            let dst = &mut out[l * 4 * h * w..][..4 * h * w];
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        let mut shape = s;
        shape[n - 2] = 2 * h;
        shape[n - 1] = 2 * w;
        self.push(Tensor { shape, data: out }, Op::Upsample2(x), &[x])
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != first[1..] {
                return Err(shape_mismatch(&first, s));
            }
            lead += s[0];
            data.extend_from_slice(self.data(p));
        }
        let mut shape = first;
        shape[0] = lead;
        Ok(self.push(Tensor { shape, data }, Op::Concat(parts.to_vec()), parts))
    }

    /// [m,k] · [k,n].
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_mismatch(&sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), false, 0.0, &mut out);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), self.data(x).to_vec())?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// [a, b, c] → [a, c, b].
    pub fn swap_inner(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(shape_mismatch(&[0, 0, 0], &s));
        }
        let data = swap_inner_data(self.data(x), s[0], s[1], s[2]);
        Ok(self.push(
            Tensor {
                shape: vec![s[0], s[2], s[1]],
                data,
            },
            Op::SwapInner(x),
            &[x],
        ))
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let d = self.data(a);
        let s = d
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / d.len().max(1) as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mse(a, b), &[a, b]))
    }

    /// Mean quantile loss of `pred` ([levels, ...]) against `target` ([1, ...]).
    pub fn pinball(&mut self, pred: Var, target: Var, levels: &[f64]) -> Result<Var> {
        let (ps, ts) = (self.shape(pred).to_vec(), self.shape(target).to_vec());
        if ps.is_empty() || ps[0] != levels.len() || ts.first() != Some(&1) || ps[1..] != ts[1..] {
            return Err(shape_mismatch(&ps, &ts));
        }
        check_levels(levels)?;
        let inner: usize = ts.iter().product();
        let (q, y) = (self.data(pred), self.data(target));
        let mut s = 0.0;
        for (p, tau) in levels.iter().enumerate() {
            for (qv, yv) in q[p * inner..(p + 1) * inner].iter().zip(y) {
                s += rho(tau, yv - qv);
            }
        }
        s /= (levels.len() * inner).max(1) as f64;
        let op = Op::Pinball {
            pred,
            target,
            levels: levels.to_vec(),
        };
        Ok(self.push(Tensor::scalar(s), op, &[pred, target]))
    }

    /// Populates gradients of the scalar `loss` with respect to every reachable input.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidConfig(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.grad_enabled {
            return Err(Error::InvalidConfig("tape was built without gradients".into()));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.backprop(i, &g);
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64], &[Node])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let mut g = self.grads[v.0].take().unwrap_or_else(|| vec![0.0; n]);
        f(&mut g, &self.nodes);
        self.grads[v.0] = Some(g);
    }

    fn backprop(&mut self, i: usize, g: &[f64]) {
        // Take the op out so that parents can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(*a, |ga, _| axpy(ga, g, 1.0));
                self.acc(*b, |gb, _| axpy(gb, g, 1.0));
            }
            Op::Sub(a, b) => {
                self.acc(*a, |ga, _| axpy(ga, g, 1.0));
                self.acc(*b, |gb, _| axpy(gb, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                self.acc(a, |ga, n| {
                    for ((d, gv), bv) in ga.iter_mut().zip(g).zip(&n[b.0].value.data) {
                        *d += gv * bv;
                    }
                });
                self.acc(b, |gb, n| {
                    for ((d, gv), av) in gb.iter_mut().zip(g).zip(&n[a.0].value.data) {
                        *d += gv * av;
                    }
                });
            }
            Op::Scale(a, s) => self.acc(*a, |ga, _| axpy(ga, g, *s)),
            Op::AddScalar(a) => self.acc(*a, |ga, _| axpy(ga, g, 1.0)),
            Op::Relu(a) => self.acc(*a, |ga, n| {
                for ((d, gv), x) in ga.iter_mut().zip(g).zip(&n[a.0].value.data) {
                    if *x > 0.0 {
                        *d += gv;
                    }
                }
            }),
            Op::Tanh(a) => {
                let out = &self.nodes[i].value.data;
                let local: Vec<f64> = out.iter().zip(g).map(|(y, gv)| gv * (1.0 - y * y)).collect();
                self.acc(*a, |ga, _| axpy(ga, &local, 1.0));
            }
            Op::Exp(a) => {
                let out = &self.nodes[i].value.data;
                let local: Vec<f64> = out.iter().zip(g).map(|(y, gv)| gv * y).collect();
                self.acc(*a, |ga, _| axpy(ga, &local, 1.0));
            }
            Op::Sum(a) => self.acc(*a, |ga, _| ga.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => self.acc(*a, |ga, _| {
                let s = g[0] / ga.len().max(1) as f64;
                ga.iter_mut().for_each(|d| *d += s);
            }),
            Op::BroadcastAdd(x, b) => {
                self.acc(*x, |gx, _| axpy(gx, g, 1.0));
                self.acc(*b, |gb, _| {
                    let inner = g.len() / gb.len().max(1);
                    for (d, chunk) in gb.iter_mut().zip(g.chunks_exact(inner.max(1))) {
                        *d += chunk.iter().sum::<f64>();
                    }
                });
            }
            Op::Conv3x3 {
                x,
                w,
                b,
                cols,
                planes,
                h,
                width,
            } => {
                let (x, w, b) = (*x, *w, *b);
                let (planes, h, width) = (*planes, *h, *width);
                let p = planes * h * width;
                let ci = self.nodes[x.0].value.shape[0];
                let co = self.nodes[w.0].value.shape[0];
                self.acc(w, |gw, _| gemm(co, p, ci * 9, g, false, cols, true, 1.0, gw));
                self.acc(b, |gb, _| {
                    for (d, row) in gb.iter_mut().zip(g.chunks_exact(p)) {
                        *d += row.iter().sum::<f64>();
                    }
                });
                self.acc(x, |gx, n| {
                    let mut dcols = vec![0.0; ci * 9 * p];
                    gemm(ci * 9, co, p, &n[w.0].value.data, true, g, false, 0.0, &mut dcols);
                    col2im(&dcols, gx, ci, planes, h, width);
                });
            }
            Op::AvgPool2(x) => {
                let s = self.nodes[x.0].value.shape.clone();
                let n = s.len();
                let (h, w) = (s[n - 2], s[n - 1]);
                let (h2, w2) = (h / 2, w / 2);
                self.acc(*x, |gx, _| {
                    for (l, gl) in g.chunks_exact(h2 * w2).enumerate() {
                        let dst = &mut gx[l * h * w..][..h * w];
                        for y in 0..h2 {
                            for xx in 0..w2 {
                                let v = 0.25 * gl[y * w2 + xx];
                                let i = 2 * y * w + 2 * xx;
                                dst[i] += v;
                                dst[i + 1] += v;
                                dst[i + w] += v;
                                dst[i + w + 1] += v;
                            }
                        }
                    }
                });
            }
            Op::Upsample2(x) => {
                let s = self.nodes[x.0].value.shape.clone();
                let n = s.len();
                let (h, w) = (s[n - 2], s[n - 1]);
                self.acc(*x, |gx, _| {
                    for (l, gl) in g.chunks_exact(4 * h * w).enumerate() {
                        let dst = &mut gx[l * h * w..][..h * w];
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                dst[(y / 2) * w + xx / 2] += gl[y * 2 * w + xx];
                            }
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    let slice = &g[off..off + len];
                    self.acc(p, |gp, _| axpy(gp, slice, 1.0));
                    off += len;
                }
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = (self.nodes[a.0].value.shape[0], self.nodes[a.0].value.shape[1]);
                let n = self.nodes[b.0].value.shape[1];
                self.acc(a, |ga, nodes| gemm(m, n, k, g, false, &nodes[b.0].value.data, true, 1.0, ga));
                self.acc(b, |gb, nodes| gemm(k, m, n, &nodes[a.0].value.data, true, g, false, 1.0, gb));
            }
            Op::Reshape(x) => self.acc(*x, |gx, _| axpy(gx, g, 1.0)),
            Op::SwapInner(x) => {
                let s = self.nodes[x.0].value.shape.clone();
                let back = swap_inner_data(g, s[0], s[2], s[1]);
                self.acc(*x, |gx, _| axpy(gx, &back, 1.0));
            }
            Op::Mse(a, b) => {
                let (a, b) = (*a, *b);
                let n = self.nodes[a.0].value.len().max(1) as f64;
                let diff: Vec<f64> = self.nodes[a.0]
                    .value
                    .data
                    .iter()
                    .zip(&self.nodes[b.0].value.data)
                    .map(|(x, y)| 2.0 * (x - y) / n * g[0])
                    .collect();
                self.acc(a, |ga, _| axpy(ga, &diff, 1.0));
                self.acc(b, |gb, _| axpy(gb, &diff, -1.0));
            }
            Op::Pinball {
                pred,
                target,
                levels,
            } => {
                let (pred, target) = (*pred, *target);
                let inner = self.nodes[target.0].value.len();
                let count = (levels.len() * inner).max(1) as f64;
                // d rho(u)/du with u = y - q
                let mut du = vec![0.0; levels.len() * inner];
                {
                    let q = &self.nodes[pred.0].value.data;
                    let y = &self.nodes[target.0].value.data;
                    for (p, tau) in levels.iter().enumerate() {
                        for j in 0..inner {
                            let u = y[j] - q[p * inner + j];
                            let ind = if u < 0.0 { 1.0 } else { 0.0 };
                            du[p * inner + j] = (tau - ind) / count * g[0];
                        }
                    }
                }
                self.acc(pred, |gq, _| axpy(gq, &du, -1.0));
                self.acc(target, |gy, _| {
                    for chunk in du.chunks_exact(inner) {
                        axpy(gy, chunk, 1.0);
                    }
                });
            }
        }
        self.nodes[i].op = op;
    }
}

fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

fn swap_inner_data(d: &[f64], a: usize, b: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; d.len()];
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                out[(i * c + k) * b + j] = d[(i * b + j) * c + k];
            }
        }
    }
    out
}

/// Quantile (pinball) loss of a single residual `u = y − q`.
pub fn rho(tau: &f64, u: f64) -> f64 {
    u * (tau - if u < 0.0 { 1.0 } else { 0.0 })
}

pub(crate) fn check_levels(levels: &[f64]) -> Result<()> {
    if let Some(t) = levels.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::OutOfRange(format!("quantile level {t} outside (0,1)")));
    }
    Ok(())
}
