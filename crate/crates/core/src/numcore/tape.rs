//! Tape-based reverse-mode automatic differentiation.
//!
//! Every op appends a node to the [`Tape`]; a node's parents always have
//! smaller indices, so walking the node list backwards is a valid reverse
//! topological order and each node is visited exactly once.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    ScalarMul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    AvgPool(Var, usize),
    Dropout(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    Huber(Var, f64),
    Square(Var),
    WrapAngle(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation tape. Single-writer; build one per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; zeros when `v` does not reach the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

/// Logistic function, clamped so the result stays strictly inside (0, 1).
fn sigmoid(x: f64) -> f64 {
    const HI: f64 = 1.0 - f64::EPSILON / 2.0;
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, HI)
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut y = x.rem_euclid(two_pi);
    if y > std::f64::consts::PI {
        y -= two_pi;
    }
    y
}

/// Elementwise Huber penalty with knot `delta`.
pub fn huber_value(x: f64, delta: f64) -> f64 {
    let a = x.abs();
    if a <= delta {
        0.5 * x * x
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn huber_grad(x: f64, delta: f64) -> f64 {
    if x.abs() <= delta {
        x
    } else {
        delta * x.signum()
    }
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from gradient flow.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Copies `v`'s value into a new constant node, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Dimension {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::Dimension {
                op: "transpose",
                lhs: s,
                rhs: vec![],
            });
        }
        let data = transpose_raw(self.value(x).data(), s[0], s[1]);
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(vec![s[1], s[0]], data), Op::Transpose(x), rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_parts(va.shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`n` bias row to every row of an `[m, n]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: sx,
                rhs: sb,
            });
        }
        let n = sx[1];
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % n])
            .collect();
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::from_parts(sx, data), Op::AddBias(x, bias), rg))
    }

    /// Scalar-tensor product; `s` must hold exactly one element.
    pub fn scalar_mul(&mut self, s: Var, x: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(Error::Dimension {
                op: "scalar_mul",
                lhs: self.shape(s).to_vec(),
                rhs: self.shape(x).to_vec(),
            });
        }
        let k = self.value(s).item();
        let t = self.value(x).map(|v| k * v);
        let rg = self.rg(s) || self.rg(x);
        Ok(self.push(t, Op::ScalarMul(s, x), rg))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let t = self.value(x).map(|v| k * v);
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, k), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(t, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(t, Op::Tanh(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let t = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(x);
        self.push(t, Op::LeakyRelu(x, slope), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v * v);
        let rg = self.rg(x);
        self.push(t, Op::Square(x), rg)
    }

    /// Elementwise Huber penalty, `0.5 x^2` inside `delta`, linear outside.
    pub fn huber(&mut self, x: Var, delta: f64) -> Result<Var> {
        if !(delta > 0.0) {
            return Err(Error::Parameter(format!("huber delta must be > 0, got {delta}")));
        }
        let t = self.value(x).map(|v| huber_value(v, delta));
        let rg = self.rg(x);
        Ok(self.push(t, Op::Huber(x, delta), rg))
    }

    /// Wraps each element to (-pi, pi]; unit derivative away from the cut.
    pub fn wrap_angle(&mut self, x: Var) -> Var {
        let t = self.value(x).map(wrap_angle);
        let rg = self.rg(x);
        self.push(t, Op::WrapAngle(x), rg)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Parameter(format!(
                "concat axis {axis} out of range for rank {}",
                base.len()
            )));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&base, axis);
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let ext = self.shape(x)[axis];
                let chunk = ext * inner;
                data.extend_from_slice(&self.value(x).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Concat(xs.to_vec(), axis),
            rg,
        ))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::Parameter(format!(
                "slice [{start}, {}) along axis {axis} out of range for {s:?}",
                start + len
            )));
        }
        let (outer, inner) = outer_inner(&s, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * s[axis] * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Slice { x, axis, start },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Mean over runs of `factor` consecutive entries of the last axis.
    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::Parameter("pool factor must be positive".into()));
        }
        let s = self.shape(x).to_vec();
        let last = *s.last().expect("non-empty shape");
        if !last.is_multiple_of(factor) {
            return Err(Error::InvalidPool {
                extent: last,
                factor,
            });
        }
        let inv = 1.0 / factor as f64;
        let data = self
            .value(x)
            .data()
            .chunks(factor)
            .map(|c| c.iter().sum::<f64>() * inv)
            .collect();
        let mut shape = s;
        *shape.last_mut().unwrap() = last / factor;
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, data), Op::AvgPool(x, factor), rg))
    }

    /// Inverted dropout. The mask is drawn from a generator seeded by `seed`,
    /// so a call is fully determined by its arguments.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        let rg = self.rg(x);
        Ok(self.push(t, Op::Dropout(x, mask), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x).mean();
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// 2-D convolution, `x: [n, c, h, w]`, `w: [o, c, k, k]`, `b: [o]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw, sb) = (
            self.shape(x).to_vec(),
            self.shape(w).to_vec(),
            self.shape(b).to_vec(),
        );
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != sw[3] {
            return Err(Error::Dimension {
                op: "conv2d",
                lhs: sx,
                rhs: sw,
            });
        }
        if sb != [sw[0]] {
            return Err(Error::Dimension {
                op: "conv2d bias",
                lhs: sw,
                rhs: sb,
            });
        }
        if stride == 0 || sx[2] + 2 * pad < sw[2] || sx[3] + 2 * pad < sw[2] {
            return Err(Error::Parameter(format!(
                "conv2d geometry invalid: input {sx:?}, kernel {sw:?}, stride {stride}, pad {pad}"
            )));
        }
        let g = ConvGeom::new(&sx, &sw, stride, pad);
        let out = conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &g,
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            Tensor::from_parts(vec![g.n, g.o, g.ho, g.wo], out),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        let mut acc = |v: Var, data: Vec<f64>| {
            if !self.rg(v) {
                return;
            }
            let shape = self.shape(v);
            match &mut grads[v.0] {
                Some(t) => {
                    for (a, b) in t.data_mut().iter_mut().zip(&data) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(Tensor::from_parts(shape.to_vec(), data)),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.rg(*a) {
                    // dA = G B^T
                    let bd = self.value(*b).data();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            da[i * k + p] = dot(grow, brow);
                        }
                    }
                    acc(*a, da);
                }
                if self.rg(*b) {
                    // dB = A^T G
                    let ad = self.value(*a).data();
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ad[i * k + p];
                            if av != 0.0 {
                                axpy(av, grow, &mut db[p * n..(p + 1) * n]);
                            }
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    acc(*a, gd.iter().zip(vb).map(|(g, y)| g * y).collect());
                }
                if self.rg(*b) {
                    acc(*b, gd.iter().zip(va).map(|(g, x)| g * x).collect());
                }
            }
            Op::AddBias(x, b) => {
                acc(*x, gd.to_vec());
                if self.rg(*b) {
                    let n = self.shape(*b)[0];
                    let mut db = vec![0.0; n];
                    for (i, v) in gd.iter().enumerate() {
                        db[i % n] += v;
                    }
                    acc(*b, db);
                }
            }
            Op::ScalarMul(s, x) => {
                let k = self.value(*s).item();
                if self.rg(*s) {
                    acc(*s, vec![dot(gd, self.value(*x).data())]);
                }
                acc(*x, gd.iter().map(|v| k * v).collect());
            }
            Op::Scale(x, k) => acc(*x, gd.iter().map(|v| k * v).collect()),
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, gd.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect());
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                acc(*x, gd.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect());
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                acc(
                    *x,
                    gd.iter()
                        .zip(xv)
                        .map(|(g, v)| if *v > 0.0 { *g } else { slope * g })
                        .collect(),
                );
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                acc(*x, gd.iter().zip(xv).map(|(g, v)| 2.0 * g * v).collect());
            }
            Op::Huber(x, delta) => {
                let xv = self.value(*x).data();
                acc(
                    *x,
                    gd.iter().zip(xv).map(|(g, v)| g * huber_grad(*v, *delta)).collect(),
                );
            }
            Op::WrapAngle(x) => acc(*x, gd.to_vec()),
            Op::Concat(xs, axis) => {
                let shape = node.value.shape();
                let (outer, inner) = outer_inner(shape, *axis);
                let total = shape[*axis];
                let mut offset = 0;
                for &x in xs {
                    let ext = self.shape(x)[*axis];
                    if self.rg(x) {
                        let mut d = Vec::with_capacity(outer * ext * inner);
                        for o in 0..outer {
                            let base = o * total * inner + offset * inner;
                            d.extend_from_slice(&gd[base..base + ext * inner]);
                        }
                        acc(x, d);
                    }
                    offset += ext;
                }
            }
            Op::Slice { x, axis, start } => {
                let src_shape = self.shape(*x);
                let (outer, inner) = outer_inner(src_shape, *axis);
                let ext = src_shape[*axis];
                let len = node.value.shape()[*axis];
                let mut d = vec![0.0; self.value(*x).len()];
                for o in 0..outer {
                    let dst = o * ext * inner + start * inner;
                    let src = o * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
                }
                acc(*x, d);
            }
            Op::Reshape(x) => acc(*x, gd.to_vec()),
            Op::Transpose(x) => {
                let s = self.shape(*x);
                acc(*x, transpose_raw(gd, s[1], s[0]));
            }
            Op::AvgPool(x, factor) => {
                let inv = 1.0 / *factor as f64;
                let d = gd
                    .iter()
                    .flat_map(|v| std::iter::repeat_n(v * inv, *factor))
                    .collect();
                acc(*x, d);
            }
            Op::Dropout(x, mask) => {
                acc(*x, gd.iter().zip(mask).map(|(g, m)| g * m).collect());
            }
            Op::Sum(x) => acc(*x, vec![gd[0]; self.value(*x).len()]),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                acc(*x, vec![gd[0] / n as f64; n]);
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let g_ = ConvGeom::new(self.shape(*x), self.shape(*w), *stride, *pad);
                if self.rg(*b) {
                    let mut db = vec![0.0; g_.o];
                    let plane = g_.ho * g_.wo;
                    for n in 0..g_.n {
                        for o in 0..g_.o {
                            let base = (n * g_.o + o) * plane;
                            db[o] += gd[base..base + plane].iter().sum::<f64>();
                        }
                    }
                    acc(*b, db);
                }
                let (dx, dw) = conv_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    &g_,
                    self.rg(*x),
                    self.rg(*w),
                );
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if let Some(dw) = dw {
                    acc(*w, dw);
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(av, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
    out
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(sx: &[usize], sw: &[usize], stride: usize, pad: usize) -> Self {
        let k = sw[2];
        Self {
            n: sx[0],
            c: sx[1],
            h: sx[2],
            w: sx[3],
            o: sw[0],
            k,
            stride,
            pad,
            ho: (sx[2] + 2 * pad - k) / stride + 1,
            wo: (sx[3] + 2 * pad - k) / stride + 1,
        }
    }

    /// Input coordinate for output index `out` and kernel tap `tap`, if inside.
    #[inline]
    fn src(&self, out: usize, tap: usize, extent: usize) -> Option<usize> {
        let pos = (out * self.stride + tap) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

fn conv_forward(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
    let plane = g.ho * g.wo;
    let mut out = vec![0.0; g.n * g.o * plane];
    for n in 0..g.n {
        for o in 0..g.o {
            let dst = &mut out[(n * g.o + o) * plane..(n * g.o + o + 1) * plane];
            dst.iter_mut().for_each(|v| *v = b[o]);
            for c in 0..g.c {
                let src = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let wv = w[((o * g.c + c) * g.k + ky) * g.k + kx];
                        for oy in 0..g.ho {
                            let Some(iy) = g.src(oy, ky, g.h) else { continue };
                            let row = &src[iy * g.w..(iy + 1) * g.w];
                            for ox in 0..g.wo {
                                if let Some(ix) = g.src(ox, kx, g.w) {
                                    dst[oy * g.wo + ox] += wv * row[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward(
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    g: &ConvGeom,
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let plane = g.ho * g.wo;
    let mut dx = want_dx.then(|| vec![0.0; x.len()]);
    let mut dw = want_dw.then(|| vec![0.0; w.len()]);
    for n in 0..g.n {
        for o in 0..g.o {
            let go = &gout[(n * g.o + o) * plane..(n * g.o + o + 1) * plane];
            for c in 0..g.c {
                let xoff = (n * g.c + c) * g.h * g.w;
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let widx = ((o * g.c + c) * g.k + ky) * g.k + kx;
                        let wv = w[widx];
                        let mut wacc = 0.0;
                        for oy in 0..g.ho {
                            let Some(iy) = g.src(oy, ky, g.h) else { continue };
                            for ox in 0..g.wo {
                                if let Some(ix) = g.src(ox, kx, g.w) {
                                    let gv = go[oy * g.wo + ox];
                                    let xi = xoff + iy * g.w + ix;
                                    wacc += gv * x[xi];
                                    if let Some(dx) = dx.as_mut() {
                                        dx[xi] += gv * wv;
                                    }
                                }
                            }
                        }
                        if let Some(dw) = dw.as_mut() {
                            dw[widx] += wacc;
                        }
                    }
                }
            }
        }
    }
    (dx, dw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(t: &mut Tape, xs: &[f64]) -> Var {
        t.param(Tensor::vector(xs))
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut t = Tape::new();
        let i2 = t.constant(Tensor::matrix(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap());
        let m = t.constant(Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
        let p = t.matmul(i2, m).unwrap();
        assert_eq!(t.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = t.constant(Tensor::matrix(&[&[1.0, 2.0]]).unwrap());
        let b = t.constant(Tensor::matrix(&[&[3.0], &[4.0]]).unwrap());
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).shape(), &[1, 1]);
        assert_eq!(t.value(c).item(), 11.0);
    }

    #[test]
    fn matmul_zero_and_mismatch() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::zeros(&[2, 3]));
        let any = t.constant(Tensor::new(vec![3, 4], (0..12).map(f64::from).collect()).unwrap());
        let p = t.matmul(z, any).unwrap();
        assert_eq!(t.value(p).shape(), &[2, 4]);
        assert!(t.value(p).data().iter().all(|&v| v == 0.0));

        let err = t.matmul(any, z).unwrap_err();
        match err {
            Error::Dimension { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![3, 4]);
                assert_eq!(rhs, vec![2, 3]);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn sigmoid_values() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(&[0.0, 2.0, -2.0, 40.0, -40.0]));
        let s = t.sigmoid(x);
        let d = t.value(s).data();
        assert_eq!(d[0], 0.5);
        // 1/(1+e^-2)
        assert!((d[1] - 0.880_797_077_977_882_3).abs() < 1e-15);
        assert!((d[1] - (1.0 - d[2])).abs() < 1e-15);
        assert!(d[3] < 1.0 && d[4] > 0.0);
    }

    #[test]
    fn elementwise_and_concat() {
        let mut t = Tape::new();
        let x = v(&mut t, &[1.5, -2.0, 3.0]);
        let ones = t.constant(Tensor::ones(&[3]));
        let y = t.mul(x, ones).unwrap();
        assert_eq!(t.value(y).data(), t.value(x).data());

        let z = t.constant(Tensor::vector(&[0.0]));
        let th = t.tanh(z);
        assert_eq!(t.value(th).item(), 0.0);

        let a = t.constant(Tensor::vector(&[1.0, 2.0]));
        let b = t.constant(Tensor::vector(&[3.0, 4.0, 5.0]));
        let c = t.concat(&[a, b], 0).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);

        let m1 = t.constant(Tensor::matrix(&[&[1.0], &[2.0]]).unwrap());
        let m2 = t.constant(Tensor::matrix(&[&[3.0, 4.0], &[5.0, 6.0]]).unwrap());
        let m = t.concat(&[m1, m2], 1).unwrap();
        assert_eq!(t.value(m).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        assert!(t.concat(&[m1, a], 0).is_err());
        assert!(t.add(a, b).is_err());
    }

    #[test]
    fn avg_pool_cases() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(&[2.0, 4.0, 6.0, 8.0]));
        let p = t.avg_pool(x, 2).unwrap();
        assert_eq!(t.value(p).data(), &[3.0, 7.0]);
        let same = t.avg_pool(x, 1).unwrap();
        assert_eq!(t.value(same).data(), t.value(x).data());
        let c = t.constant(Tensor::full(&[2, 6], 1.25));
        let pc = t.avg_pool(c, 3).unwrap();
        assert_eq!(t.value(pc).shape(), &[2, 2]);
        assert!(t.value(pc).data().iter().all(|&v| v == 1.25));
        assert!(matches!(
            t.avg_pool(x, 3),
            Err(Error::InvalidPool { extent: 4, factor: 3 })
        ));
    }

    #[test]
    fn dropout_modes() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::full(&[100_000], 1.0));
        assert_eq!(t.dropout(x, 0.25, false, 7).unwrap(), x);
        assert_eq!(t.dropout(x, 0.0, true, 7).unwrap(), x);
        let d = t.dropout(x, 0.25, true, 7).unwrap();
        let vals = t.value(d).data();
        let kept = vals.iter().filter(|&&v| v != 0.0).count() as f64 / vals.len() as f64;
        assert!((kept - 0.75).abs() <= 0.01, "kept fraction {kept}");
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15));
        assert!(t.dropout(x, 1.0, true, 7).is_err());
        assert!(t.dropout(x, -0.1, true, 7).is_err());
    }

    #[test]
    fn transpose_values_and_grad() {
        let mut t = Tape::new();
        let x = t.param(Tensor::matrix(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap());
        let y = t.transpose(x).unwrap();
        assert_eq!(t.shape(y), &[3, 2]);
        assert_eq!(t.value(y).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let w = t.constant(Tensor::matrix(&[&[1.0, 10.0], &[100.0, 1000.0], &[0.0, 0.0]]).unwrap());
        let m = t.mul(y, w).unwrap();
        let s = t.sum(m);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).data(), &[1.0, 100.0, 0.0, 10.0, 1000.0, 0.0]);
        let v1 = t.constant(Tensor::vector(&[1.0]));
        assert!(t.transpose(v1).is_err());
    }

    #[test]
    fn backward_basic_cases() {
        let mut t = Tape::new();
        let x = v(&mut t, &[1.0, 2.0, 3.0]);
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).data(), &[1.0, 1.0, 1.0]);

        let mut t = Tape::new();
        let x = v(&mut t, &[1.0, 2.0]);
        let p = v(&mut t, &[5.0]);
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).data(), &[2.0, 4.0]);
        assert_eq!(g.get(p).data(), &[0.0]);
        assert!(matches!(t.backward(sq), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f = sum(a*x + x), df/dx = a + 1
        let mut t = Tape::new();
        let x = v(&mut t, &[1.0, -1.0]);
        let a = t.constant(Tensor::vector(&[3.0, 4.0]));
        let ax = t.mul(a, x).unwrap();
        let y = t.add(ax, x).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).data(), &[4.0, 5.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut t = Tape::new();
        let x = v(&mut t, &[2.0]);
        let d = t.detach(x);
        let y = t.mul(d, x).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).data(), &[2.0]);
    }

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.3 + 4.0 * PI) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn conv_single_tap_matches_manual() {
        // 1x1 kernel, stride 1: a per-pixel affine map.
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 2, 2, 2], (1..=8).map(f64::from).collect()).unwrap());
        let w = t.constant(Tensor::new(vec![1, 2, 1, 1], vec![1.0, -1.0]).unwrap());
        let b = t.constant(Tensor::vector(&[0.5]));
        let y = t.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(t.value(y).data(), &[-3.5, -3.5, -3.5, -3.5]);
    }

    #[test]
    fn conv_stride_pad_shape() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[3, 6, 16, 16]));
        let w = t.constant(Tensor::zeros(&[8, 6, 3, 3]));
        let b = t.constant(Tensor::zeros(&[8]));
        let y = t.conv2d(x, w, b, 2, 1).unwrap();
        assert_eq!(t.value(y).shape(), &[3, 8, 8, 8]);
    }
}
