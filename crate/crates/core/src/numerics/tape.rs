//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends a node holding its forward value. Nodes are only appended,
//! so parents always precede children and a reverse sweep is a valid
//! topological order. A node keeps its op record only when some parent needs
//! a gradient; otherwise it is stored as a constant.

use std::collections::{BTreeMap, HashMap};

use super::conv;
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    Silu,
    Exp,
    Square,
    Abs,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Broadcast(Var),
    MatMul(Var, Var),
    Conv2d(Var, Var),
    Unary(Unary, Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Downsample2(Var),
    Upsample2(Var),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<String, Var>,
    bindings: Vec<(String, Var)>,
    trainable: Vec<String>,
}

impl Tape {
    /// Tape on which no parameter is trainable (inference).
    pub fn new() -> Self {
        Self::default()
    }

    /// Tape on which parameters whose name starts with any of `prefixes` get gradients.
    pub fn with_trainable<S: AsRef<str>>(prefixes: &[S]) -> Self {
        Tape {
            trainable: prefixes.iter().map(|s| s.as_ref().to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.trainable.iter().any(|p| name.starts_with(p.as_str()))
    }

    /// Binds a named parameter, once per tape.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?
            .clone();
        let grad = self.is_trainable(name);
        let v = self.leaf(value, grad);
        self.bound.insert(name.to_string(), v);
        self.bindings.push((name.to_string(), v));
        Ok(v)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(op, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("add", a, b, |p, q| p + q)?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("sub", a, b, |p, q| p - q)?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("mul", a, b, |p, q| p * q)?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), g))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v * k).collect();
        let out = Tensor::new(x.shape(), data).expect("same shape");
        let g = self.any_grad(&[a]);
        self.push(out, Op::Scale(a, k), g)
    }

    /// `a + k` elementwise.
    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v + k).collect();
        let out = Tensor::new(x.shape(), data).expect("same shape");
        let g = self.any_grad(&[a]);
        self.push(out, Op::Offset(a), g)
    }

    /// `1 - a` elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.scale(a, -1.0);
        self.offset(n, 1.0)
    }

    /// Repeats `a` to `shape`; `a`'s shape must be a suffix of `shape` (scalars always are).
    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(a).to_vec();
        if src.len() > shape.len() || shape[shape.len() - src.len()..] != src[..] {
            return Err(Error::Shape {
                op: "broadcast",
                lhs: src,
                rhs: shape.to_vec(),
            });
        }
        let x = self.value(a).data();
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            data.extend_from_slice(x);
        }
        let out = Tensor::new(shape, data)?;
        let g = self.any_grad(&[a]);
        Ok(self.push(out, Op::Broadcast(a), g))
    }

    /// `a + bias` where `bias` broadcasts over the leading dimensions of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let b = self.broadcast(bias, &shape)?;
        self.add(a, b)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new(&[m, n], out)?;
        let g = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), g))
    }

    /// Stride-1, zero-padded ("same") convolution of an `h×w×cin` map with a
    /// `k×k×cin×cout` kernel (k odd).
    pub fn conv2d(&mut self, input: Var, kernel: Var) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        let geom = conv::Geometry::check(&si, &sk)?;
        let out = conv::forward(&geom, self.value(input).data(), self.value(kernel).data());
        let out = Tensor::new(&[geom.h, geom.w, geom.cout], out)?;
        let g = self.any_grad(&[input, kernel]);
        Ok(self.push(out, Op::Conv2d(input, kernel), g))
    }

    pub fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let x = self.value(a);
        let f: fn(f64) -> f64 = match kind {
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => f64::tanh,
            Unary::Relu => |v| v.max(0.0),
            Unary::Silu => |v| v * sigmoid(v),
            Unary::Exp => f64::exp,
            Unary::Square => |v| v * v,
            Unary::Abs => f64::abs,
        };
        let data = x.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(x.shape(), data).expect("same shape");
        let g = self.any_grad(&[a]);
        self.push(out, Op::Unary(kind, a), g)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(Unary::Silu, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(Unary::Abs, a)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let g = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.sum() / x.numel() as f64;
        let g = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), g)
    }

    /// Concatenation along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let lead = leading(self.shape(*first)).to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if leading(s) != &lead[..] || s.is_empty() {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.shape(*first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::new(&shape, data)?;
        let g = self.any_grad(parts);
        Ok(self.push(out, Op::Concat(parts.to_vec()), g))
    }

    /// Channels `start..start+len` of the last axis.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let width = *s.last().unwrap_or(&0);
        if s.is_empty() || len == 0 || start + len > width {
            return Err(Error::Shape {
                op: "slice",
                lhs: s,
                rhs: vec![start, len],
            });
        }
        let rows = self.value(a).numel() / width;
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&x[r * width + start..r * width + start + len]);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = len;
        let out = Tensor::new(&shape, data)?;
        let g = self.any_grad(&[a]);
        Ok(self.push(out, Op::Slice(a, start), g))
    }

    /// Nearest-neighbour 2× spatial downsample of an `h×w×c` map (keeps even rows/cols).
    pub fn downsample2(&mut self, a: Var) -> Result<Var> {
        let [h, w, c] = hwc("downsample2", self.shape(a))?;
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(oh * ow * c);
        for y in 0..oh {
            for xx in 0..ow {
                let base = ((2 * y) * w + 2 * xx) * c;
                data.extend_from_slice(&x[base..base + c]);
            }
        }
        let out = Tensor::new(&[oh, ow, c], data)?;
        let g = self.any_grad(&[a]);
        Ok(self.push(out, Op::Downsample2(a), g))
    }

    /// Bilinear 2× spatial upsample (half-pixel centres, clamped border).
    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        let [h, w, c] = hwc("upsample2", self.shape(a))?;
        let (oh, ow) = (2 * h, 2 * w);
        let ty = upsample_taps(h);
        let tx = upsample_taps(w);
        let x = self.value(a).data();
        let mut data = vec![0.0; oh * ow * c];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let o = &mut data[(oy * ow + ox) * c..][..c];
                for (yy, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                    for (xx, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                        let wgt = wy * wx;
                        let src = &x[(yy * w + xx) * c..][..c];
                        for (d, s) in o.iter_mut().zip(src) {
                            *d += wgt * s;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(&[oh, ow, c], data)?;
        let g = self.any_grad(&[a]);
        Ok(self.push(out, Op::Upsample2(a), g))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        let g = self.any_grad(&[a]);
        Ok(self.push(out, Op::Reshape(a), g))
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("backward on an empty tape"));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape {
                op: "backward (loss must be scalar)",
                lhs: self.shape(loss).to_vec(),
                rhs: vec![],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        Ok(Gradients {
            grads,
            bindings: self.bindings.clone(),
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| axpy(s, g, 1.0));
                acc(*b, &mut |s| axpy(s, g, 1.0));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| axpy(s, g, 1.0));
                acc(*b, &mut |s| axpy(s, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for ((d, gi), q) in s.iter_mut().zip(g).zip(xb) {
                        *d += gi * q;
                    }
                });
                acc(*b, &mut |s| {
                    for ((d, gi), p) in s.iter_mut().zip(g).zip(xa) {
                        *d += gi * p;
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |s| axpy(s, g, *k)),
            Op::Offset(a) | Op::Reshape(a) => acc(*a, &mut |s| axpy(s, g, 1.0)),
            Op::Broadcast(a) => acc(*a, &mut |s| {
                let n = s.len();
                for (i, gi) in g.iter().enumerate() {
                    s[i % n] += gi;
                }
            }),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (xa, xb) = (val(*a), val(*b));
                // dA = G · Bᵀ, dB = Aᵀ · G
                acc(*a, &mut |s| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut t = 0.0;
                            for j in 0..n {
                                t += g[i * n + j] * xb[p * n + j];
                            }
                            s[i * k + p] += t;
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..m {
                        for p in 0..k {
                            let ap = xa[i * k + p];
                            for j in 0..n {
                                s[p * n + j] += ap * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Conv2d(inp, ker) => {
                let geom = conv::Geometry::check(
                    self.nodes[inp.0].value.shape(),
                    self.nodes[ker.0].value.shape(),
                )
                .expect("checked in forward");
                let (xi, xk) = (val(*inp), val(*ker));
                acc(*inp, &mut |s| conv::backward_input(&geom, g, xk, s));
                acc(*ker, &mut |s| conv::backward_kernel(&geom, g, xi, s));
            }
            Op::Unary(kind, a) => {
                let x = val(*a);
                let y = node.value.data();
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        let d = match kind {
                            Unary::Sigmoid => y[i] * (1.0 - y[i]),
                            Unary::Tanh => 1.0 - y[i] * y[i],
                            Unary::Relu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Silu => {
                                let sg = sigmoid(x[i]);
                                sg * (1.0 + x[i] * (1.0 - sg))
                            }
                            Unary::Exp => y[i],
                            Unary::Square => 2.0 * x[i],
                            Unary::Abs => x[i].signum() * (x[i] != 0.0) as u8 as f64,
                        };
                        s[i] += g[i] * d;
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => acc(*a, &mut |s| {
                let k = g[0] / s.len() as f64;
                s.iter_mut().for_each(|d| *d += k);
            }),
            Op::Concat(parts) => {
                let total = *node.value.shape().last().unwrap();
                let rows = node.value.numel() / total;
                let mut off = 0;
                for &p in parts {
                    let w = *self.nodes[p.0].value.shape().last().unwrap();
                    acc(p, &mut |s| {
                        for r in 0..rows {
                            axpy(&mut s[r * w..(r + 1) * w], &g[r * total + off..r * total + off + w], 1.0);
                        }
                    });
                    off += w;
                }
            }
            Op::Slice(a, start) => {
                let width = *self.nodes[a.0].value.shape().last().unwrap();
                let len = *node.value.shape().last().unwrap();
                let rows = node.value.numel() / len;
                acc(*a, &mut |s| {
                    for r in 0..rows {
                        let dst = &mut s[r * width + start..r * width + start + len];
                        axpy(dst, &g[r * len..(r + 1) * len], 1.0);
                    }
                });
            }
            Op::Downsample2(a) => {
                let sa = self.nodes[a.0].value.shape();
                let (w, c) = (sa[1], sa[2]);
                let so = node.value.shape();
                let (oh, ow) = (so[0], so[1]);
                acc(*a, &mut |s| {
                    for y in 0..oh {
                        for x in 0..ow {
                            let src = ((2 * y) * w + 2 * x) * c;
                            axpy(&mut s[src..src + c], &g[(y * ow + x) * c..][..c], 1.0);
                        }
                    }
                });
            }
            Op::Upsample2(a) => {
                let sa = self.nodes[a.0].value.shape();
                let (h, w, c) = (sa[0], sa[1], sa[2]);
                let (ty, tx) = (upsample_taps(h), upsample_taps(w));
                let ow = 2 * w;
                acc(*a, &mut |s| {
                    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let go = &g[(oy * ow + ox) * c..][..c];
                            for (yy, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                                for (xx, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                                    axpy(&mut s[(yy * w + xx) * c..][..c], go, wy * wx);
                                }
                            }
                        }
                    }
                });
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    bindings: Vec<(String, Var)>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if `v` does not influence the loss.
    pub fn get(&self, tape: &Tape, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(tape.shape(v), g.clone()).ok()
    }

    /// Gradients of every trainable bound parameter, keyed by name.
    /// Parameters not reached by the loss get zeros.
    pub fn params(&self, tape: &Tape) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, v) in &self.bindings {
            if !tape.requires_grad(*v) {
                continue;
            }
            let t = self
                .get(tape, *v)
                .unwrap_or_else(|| Tensor::zeros(tape.shape(*v)));
            out.insert(name.clone(), t);
        }
        out
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn axpy(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

fn leading(shape: &[usize]) -> &[usize] {
    &shape[..shape.len().saturating_sub(1)]
}

fn hwc(op: &'static str, shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        &[h, w, c] => Ok([h, w, c]),
        _ => Err(Error::Shape {
            op,
            lhs: shape.to_vec(),
            rhs: vec![],
        }),
    }
}

// (lo, hi, frac) source taps for each of the 2n output positions.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let ap = a[i * k + p];
            axpy(row, &b[p * n..(p + 1) * n], ap);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).item(), 0.5);
    }

    #[test]
    fn conv_scalar_product() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 1], &[2.0]));
        let k = tape.constant(t(&[1, 1, 1, 1], &[3.0]));
        let y = tape.conv2d(x, k).unwrap();
        assert_eq!(tape.value(y).data(), &[6.0]);
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let y = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let y = tape.square(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(&tape, x).unwrap().item(), 6.0);
    }

    #[test]
    fn sum_sigmoid_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[4]), true);
        let s = tape.sigmoid(x);
        let l = tape.sum(s);
        let g = tape.backward(l).unwrap();
        assert!(g.get(&tape, x).unwrap().data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn fan_out_accumulates() {
        // l = x*x + 3x at x=2 -> dl/dx = 2x + 3 = 7
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0), true);
        let a = tape.mul(x, x).unwrap();
        let b = tape.scale(x, 3.0);
        let l = tape.add(a, b).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(&tape, x).unwrap().item(), 7.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2]), true);
        assert!(tape.backward(x).is_err());
        assert!(Tape::new().backward(Var(0)).is_err());
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3, 2]));
        let msg = tape.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("add") && msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
        let msg = tape.matmul(a, a).unwrap_err().to_string();
        assert!(msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..5 * 4 * 2).map(|i| (i as f64).sin()).collect();
        let x = tape.constant(t(&[5, 4, 2], &data));
        let mut k = vec![0.0; 3 * 3 * 2 * 2];
        for c in 0..2 {
            k[((3 + 1) * 2 + c) * 2 + c] = 1.0;
        }
        let k = tape.constant(t(&[3, 3, 2, 2], &k));
        let y = tape.conv2d(x, k).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn frozen_inputs_record_nothing() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(1.0));
        let b = tape.exp(a);
        assert!(!tape.requires_grad(b));
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::full(&[3, 2, 2], 0.7));
        let u = tape.upsample2(a).unwrap();
        assert_eq!(tape.shape(u), &[6, 4, 2]);
        assert!(tape.value(u).data().iter().all(|v| (v - 0.7).abs() < 1e-15));
    }
}
