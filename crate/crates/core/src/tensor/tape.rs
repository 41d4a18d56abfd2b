use super::kernels::{self, Broadcast3, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    GlobalAvgPool(Var),
    ChannelPool { x: Var, argmax: Vec<usize> },
    Softmax(Var),
    Relu(Var),
    Sigmoid(Var),
    MulBroadcast { x: Var, gate: Var, plan: Broadcast3 },
    AddBroadcast { x: Var, other: Var, plan: Broadcast3 },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Transpose(Var),
    Stack(Vec<Var>),
    BceWithLogits { logits: Var, target: Tensor },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::ChannelPool { .. } => "channel_pool",
            Op::Softmax(_) => "softmax",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::MulBroadcast { .. } => "mul_broadcast",
            Op::AddBroadcast { .. } => "add_broadcast",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Reshape(_) => "reshape",
            Op::Transpose(_) => "transpose",
            Op::Stack(_) => "stack",
            Op::BceWithLogits { .. } => "bce_with_logits",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed ops with their saved values.
///
/// One tape serves one forward/backward session. [`Tape::backward`] walks
/// the records in exact reverse order of execution and accumulates
/// gradients additively into every node that needs one.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    #[cfg(test)]
    pub(crate) corrupt_sigmoid_backward: bool,
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

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::numeric(op.name()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).matmul(self.value(b))?;
        self.push(y, Op::MatMul(a, b), &[a, b])
    }

    /// Stride-1 cross-correlation of a `C_in×H×W` map with a
    /// `C_out×C_in×k×k` kernel, zero padded by `pad` on every side.
    pub fn conv2d(&mut self, x: Var, w: Var, pad: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), pad)?;
        let mut out = vec![0.0; geom.out_len()];
        kernels::conv2d_forward(self.value(x).data(), self.value(w).data(), &mut out, &geom);
        let y = Tensor::new(geom.out_shape(), out)?;
        self.push(y, Op::Conv2d { x, w, geom }, &[x, w])
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).global_avg_pool()?;
        self.push(y, Op::GlobalAvgPool(x), &[x])
    }

    pub fn channel_pool(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = kernels::chw(self.shape(x), "channel_pool")?;
        if c == 0 {
            return Err(Error::dim("channel_pool", "zero channels"));
        }
        let (out, argmax) = kernels::channel_pool(self.value(x).data(), c, h * w);
        let y = Tensor::new([2, h, w], out)?;
        self.push(y, Op::ChannelPool { x, argmax }, &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).softmax()?;
        self.push(y, Op::Softmax(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).relu();
        self.push(y, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).sigmoid();
        self.push(y, Op::Sigmoid(x), &[x])
    }

    /// `x ⊙ gate` where `gate` is `C×1×1`, `1×H×W` or any other shape
    /// whose axes are 1 or match `x`.
    pub fn mul_broadcast(&mut self, x: Var, gate: Var) -> Result<Var> {
        let plan = Broadcast3::new(self.shape(x), self.shape(gate), "mul_broadcast")?;
        let y = Tensor::new(
            self.shape(x).to_vec(),
            plan.apply(self.value(x).data(), self.value(gate).data(), |a, b| a * b),
        )?;
        self.push(y, Op::MulBroadcast { x, gate, plan }, &[x, gate])
    }

    pub fn add_broadcast(&mut self, x: Var, other: Var) -> Result<Var> {
        let plan = Broadcast3::new(self.shape(x), self.shape(other), "add_broadcast")?;
        let y = Tensor::new(
            self.shape(x).to_vec(),
            plan.apply(self.value(x).data(), self.value(other).data(), |a, b| a + b),
        )?;
        self.push(y, Op::AddBroadcast { x, other, plan }, &[x, other])
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let y = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(y, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let y = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(y, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let y = self.value(x).map(|v| v * factor);
        self.push(y, Op::Scale(x, factor), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::dim("mean", "empty tensor"));
        }
        let y = Tensor::scalar(self.value(x).sum() / n as f64);
        self.push(y, Op::Mean(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let y = self.value(x).reshape(shape)?;
        self.push(y, Op::Reshape(x), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).transpose()?;
        self.push(y, Op::Transpose(x), &[x])
    }

    /// Concatenates equally shaped values along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let y = Tensor::stack(&tensors)?;
        self.push(y, Op::Stack(parts.to_vec()), parts)
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and `target`.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != target.shape() {
            return Err(Error::dim(
                "bce_with_logits",
                format!("logits {:?} vs target {:?}", z.shape(), target.shape()),
            ));
        }
        let n = z.numel().max(1) as f64;
        let total: f64 = z
            .data()
            .iter()
            .zip(target.data())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let y = Tensor::scalar(total / n);
        self.push(
            y,
            Op::BceWithLogits {
                logits,
                target: target.clone(),
            },
            &[logits],
        )
    }

    fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], v: Var, f: impl FnOnce(&mut [f64])) {
        if !nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape().to_vec()));
        f(slot.data_mut());
    }

    /// Back-propagates from a scalar `loss`, replacing any previous grads.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::contract("backward", "tape is empty"));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::new(self.shape(loss).to_vec(), vec![1.0])?);
        }
        let nodes = &self.nodes;
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            if !gy.is_finite() {
                return Err(Error::Numeric {
                    op: nodes[i].op.name(),
                    context: Some("gradient flowing into backward".into()),
                });
            }
            let gy_data = gy.data();
            let node = &nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k, p) = kernels::matmul_dims(nodes[a.0].value.shape(), nodes[b.0].value.shape())?;
                    let bv = nodes[b.0].value.data();
                    Self::accumulate(&mut grads, nodes, *a, |da| kernels::matmul_grad_a(gy_data, bv, da, m, k, p));
                    let av = nodes[a.0].value.data();
                    Self::accumulate(&mut grads, nodes, *b, |db| kernels::matmul_grad_b(av, gy_data, db, m, k, p));
                }
                Op::Conv2d { x, w, geom } => {
                    let wv = nodes[w.0].value.data();
                    Self::accumulate(&mut grads, nodes, *x, |dx| kernels::conv2d_grad_input(gy_data, wv, dx, geom));
                    let xv = nodes[x.0].value.data();
                    Self::accumulate(&mut grads, nodes, *w, |dw| kernels::conv2d_grad_weight(gy_data, xv, dw, geom));
                }
                Op::GlobalAvgPool(x) => {
                    let plane = nodes[x.0].value.numel() / gy_data.len();
                    let inv = 1.0 / plane as f64;
                    Self::accumulate(&mut grads, nodes, *x, |dx| {
                        for (c, chunk) in dx.chunks_mut(plane).enumerate() {
                            let g = gy_data[c] * inv;
                            chunk.iter_mut().for_each(|d| *d += g);
                        }
                    });
                }
                Op::ChannelPool { x, argmax } => {
                    let plane = argmax.len();
                    let c = nodes[x.0].value.numel() / plane;
                    let inv = 1.0 / c as f64;
                    Self::accumulate(&mut grads, nodes, *x, |dx| {
                        for (p, &ch) in argmax.iter().enumerate() {
                            dx[ch * plane + p] += gy_data[p];
                        }
                        for ch in 0..c {
                            for p in 0..plane {
                                dx[ch * plane + p] += gy_data[plane + p] * inv;
                            }
                        }
                    });
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let n = *node.value.shape().last().unwrap_or(&1);
                    Self::accumulate(&mut grads, nodes, *x, |dx| {
                        if n == 0 {
                            return;
                        }
                        for ((dxr, yr), gr) in dx.chunks_mut(n).zip(y.chunks(n)).zip(gy_data.chunks(n)) {
                            let inner = kernels::dot(yr, gr);
                            for j in 0..n {
                                dxr[j] += yr[j] * (gr[j] - inner);
                            }
                        }
                    });
                }
                Op::Relu(x) => {
                    let xv = nodes[x.0].value.data();
                    Self::accumulate(&mut grads, nodes, *x, |dx| {
                        for ((d, &xv), &g) in dx.iter_mut().zip(xv).zip(gy_data) {
                            if xv > 0.0 {
                                *d += g;
                            }
                        }
                    });
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    #[cfg(test)]
                    let corrupt = self.corrupt_sigmoid_backward;
                    #[cfg(not(test))]
                    let corrupt = false;
                    Self::accumulate(&mut grads, nodes, *x, |dx| {
                        for ((d, &s), &g) in dx.iter_mut().zip(y).zip(gy_data) {
                            // The corrupted variant drops the (1 - s) factor.
                            *d += if corrupt { g * s } else { g * s * (1.0 - s) };
                        }
                    });
                }
                Op::MulBroadcast { x, gate, plan } => {
                    let gv = nodes[gate.0].value.data();
                    let xv = nodes[x.0].value.data();
                    Self::accumulate(&mut grads, nodes, *x, |dx| {
                        let part = plan.apply(gy_data, gv, |g, s| g * s);
                        dx.iter_mut().zip(part).for_each(|(d, p)| *d += p);
                    });
                    Self::accumulate(&mut grads, nodes, *gate, |dg| {
                        let prod: Vec<f64> = gy_data.iter().zip(xv).map(|(g, x)| g * x).collect();
                        plan.reduce(&prod, dg);
                    });
                }
                Op::AddBroadcast { x, other, plan } => {
                    Self::accumulate(&mut grads, nodes, *x, |dx| {
                        dx.iter_mut().zip(gy_data).for_each(|(d, g)| *d += g);
                    });
                    Self::accumulate(&mut grads, nodes, *other, |dg| plan.reduce(gy_data, dg));
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        Self::accumulate(&mut grads, nodes, *v, |d| {
                            d.iter_mut().zip(gy_data).for_each(|(d, g)| *d += g);
                        });
                    }
                }
                Op::Mul(a, b) => {
                    let av = nodes[a.0].value.data();
                    let bv = nodes[b.0].value.data();
                    Self::accumulate(&mut grads, nodes, *a, |d| {
                        for ((d, g), o) in d.iter_mut().zip(gy_data).zip(bv) {
                            *d += g * o;
                        }
                    });
                    Self::accumulate(&mut grads, nodes, *b, |d| {
                        for ((d, g), o) in d.iter_mut().zip(gy_data).zip(av) {
                            *d += g * o;
                        }
                    });
                }
                Op::Scale(x, factor) => {
                    Self::accumulate(&mut grads, nodes, *x, |d| {
                        d.iter_mut().zip(gy_data).for_each(|(d, g)| *d += g * factor);
                    });
                }
                Op::Sum(x) => {
                    let g = gy_data[0];
                    Self::accumulate(&mut grads, nodes, *x, |d| d.iter_mut().for_each(|d| *d += g));
                }
                Op::Mean(x) => {
                    let g = gy_data[0] / nodes[x.0].value.numel() as f64;
                    Self::accumulate(&mut grads, nodes, *x, |d| d.iter_mut().for_each(|d| *d += g));
                }
                Op::Reshape(x) => {
                    Self::accumulate(&mut grads, nodes, *x, |d| {
                        d.iter_mut().zip(gy_data).for_each(|(d, g)| *d += g);
                    });
                }
                Op::Transpose(x) => {
                    let (r, c) = kernels::rc(nodes[x.0].value.shape(), "transpose")?;
                    // gy is c×r; its transpose is the r×c input gradient.
                    let back = kernels::transpose(gy_data, c, r);
                    Self::accumulate(&mut grads, nodes, *x, |d| {
                        d.iter_mut().zip(back).for_each(|(d, g)| *d += g);
                    });
                }
                Op::Stack(parts) => {
                    let inner = gy_data.len() / parts.len();
                    for (k, v) in parts.iter().enumerate() {
                        let chunk = &gy_data[k * inner..(k + 1) * inner];
                        Self::accumulate(&mut grads, nodes, *v, |d| {
                            d.iter_mut().zip(chunk).for_each(|(d, g)| *d += g);
                        });
                    }
                }
                Op::BceWithLogits { logits, target } => {
                    let z = nodes[logits.0].value.data();
                    let scale = gy_data[0] / z.len().max(1) as f64;
                    Self::accumulate(&mut grads, nodes, *logits, |d| {
                        for ((d, &z), &y) in d.iter_mut().zip(z).zip(target.data()) {
                            *d += (kernels::sigmoid(z) - y) * scale;
                        }
                    });
                }
            }
            grads[i] = Some(gy);
        }
        self.grads = grads;
        Ok(())
    }
}
