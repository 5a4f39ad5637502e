//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Each operation appends a node holding its forward value and the opcode
//! that produced it. Because nodes can only reference earlier nodes, the tape
//! order is already topological: the backward pass walks it once in reverse,
//! accumulating gradients into every node it reaches. Leaves the loss does
//! not reach keep a zero gradient.
//!
//! All arithmetic is `f64`. Kinked activations use the subgradient that is
//! zero at the kink (`|x|` and `relu` report derivative 0 at `x == 0`).

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a tape node. Only valid for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `[n, d]` plus a `[d]` vector broadcast over rows.
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    LeakyRelu(NodeId, f64),
    Relu(NodeId),
    Abs(NodeId),
    Sigmoid(NodeId),
    /// Normalization whose statistics were computed from the input batch, so
    /// gradients must flow through the mean and variance as well.
    BatchNormBatch {
        input: NodeId,
        scale: NodeId,
        shift: NodeId,
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
    },
    /// Normalization with frozen statistics (an affine map per feature).
    BatchNormFixed {
        input: NodeId,
        scale: NodeId,
        shift: NodeId,
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
    },
    Mean(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients produced by [`Tape::backward`], indexed by node id.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a node, if the node was reached.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Flatten the gradient for `id` into `out`, writing zeros when the node
    /// was not reached by the backward pass.
    pub fn extend_flat(&self, id: NodeId, len: usize, out: &mut Vec<f64>) {
        match &self.grads[id.0] {
            Some(t) => out.extend_from_slice(t.values()),
            None => out.extend(std::iter::repeat_n(0.0, len)),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Drop all nodes but keep the allocation for reuse.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Record an input tensor. Leaves are both the differentiable parameters
    /// and the constant data; backward simply never visits constants' users
    /// in a way the caller cares about.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.is_matrix() || !vb.is_matrix() || va.cols() != vb.rows() {
            return Err(Error::ShapeMismatch(format!(
                "matmul of {:?} by {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let value = va.matmul(vb);
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if !vx.is_matrix() || vb.shape().len() != 1 || vx.cols() != vb.len() {
            return Err(Error::ShapeMismatch(format!(
                "add_bias of {:?} with {:?}",
                vx.shape(),
                vb.shape()
            )));
        }
        let d = vx.cols();
        let values = vx
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + vb.values()[i % d])
            .collect();
        let value = Tensor::new(vx.shape().to_vec(), values)?;
        Ok(self.push(Op::AddBias(x, bias), value))
    }

    fn elementwise2(&mut self, a: NodeId, b: NodeId, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{name} of {:?} with {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let values = va
            .values()
            .iter()
            .zip(vb.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), values)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.elementwise2(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.elementwise2(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.elementwise2(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    fn map(&mut self, x: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let vx = self.value(x);
        let values = vx.values().iter().map(|&v| f(v)).collect();
        Tensor::new(vx.shape().to_vec(), values).expect("mapped tensor keeps shape")
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let value = self.map(x, |v| v * k);
        self.push(Op::Scale(x, k), value)
    }

    pub fn add_scalar(&mut self, x: NodeId, k: f64) -> NodeId {
        let value = self.map(x, |v| v + k);
        self.push(Op::AddScalar(x), value)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let value = self.map(x, |v| if v > 0.0 { v } else { slope * v });
        self.push(Op::LeakyRelu(x, slope), value)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.map(x, |v| v.max(0.0));
        self.push(Op::Relu(x), value)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let value = self.map(x, f64::abs);
        self.push(Op::Abs(x), value)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.map(x, |v| 1.0 / (1.0 + (-v).exp()));
        self.push(Op::Sigmoid(x), value)
    }

    /// Mean over all elements; the result is a `[1]` scalar.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x);
        let m = vx.values().iter().sum::<f64>() / vx.len() as f64;
        self.push(Op::Mean(x), Tensor::scalar(m))
    }

    /// Batch normalization using statistics of the input batch itself
    /// (training behaviour). Returns the node plus the per-feature mean and
    /// biased variance so the caller can refresh running statistics.
    pub fn batch_norm_batch(
        &mut self,
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        eps: f64,
    ) -> Result<(NodeId, Vec<f64>, Vec<f64>)> {
        let vx = self.value(x);
        if !vx.is_matrix() {
            return Err(Error::ShapeMismatch("batch norm expects a matrix input".into()));
        }
        let (n, d) = (vx.rows(), vx.cols());
        self.check_bn_params(scale, shift, d)?;

        let mut mean = vec![0.0; d];
        for row in 0..n {
            for (f, m) in mean.iter_mut().enumerate() {
                *m += vx.values()[row * d + f];
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for row in 0..n {
            for (f, v) in var.iter_mut().enumerate() {
                let delta = vx.values()[row * d + f] - mean[f];
                *v += delta * delta;
            }
        }
        for v in &mut var {
            *v /= n as f64;
        }

        let value = self.bn_forward(x, scale, shift, &mean, &var, eps);
        let id = self.push(
            Op::BatchNormBatch { input: x, scale, shift, mean: mean.clone(), var: var.clone(), eps },
            value,
        );
        Ok((id, mean, var))
    }

    /// Batch normalization with externally fixed statistics (evaluation
    /// behaviour); gradients treat the statistics as constants.
    pub fn batch_norm_fixed(
        &mut self,
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
    ) -> Result<NodeId> {
        let vx = self.value(x);
        if !vx.is_matrix() {
            return Err(Error::ShapeMismatch("batch norm expects a matrix input".into()));
        }
        let d = vx.cols();
        self.check_bn_params(scale, shift, d)?;
        if mean.len() != d || var.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "batch norm statistics of length {}/{} for width {d}",
                mean.len(),
                var.len()
            )));
        }
        let value = self.bn_forward(x, scale, shift, &mean, &var, eps);
        Ok(self.push(Op::BatchNormFixed { input: x, scale, shift, mean, var, eps }, value))
    }

    fn check_bn_params(&self, scale: NodeId, shift: NodeId, d: usize) -> Result<()> {
        let (vs, vb) = (self.value(scale), self.value(shift));
        if vs.shape() != [d] || vb.shape() != [d] {
            return Err(Error::ShapeMismatch(format!(
                "batch norm scale {:?} / shift {:?} for width {d}",
                vs.shape(),
                vb.shape()
            )));
        }
        Ok(())
    }

    fn bn_forward(
        &self,
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Tensor {
        let vx = self.value(x);
        let (n, d) = (vx.rows(), vx.cols());
        let vs = self.value(scale).values();
        let vb = self.value(shift).values();
        let inv: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = vec![0.0; n * d];
        for row in 0..n {
            for f in 0..d {
                let xhat = (vx.values()[row * d + f] - mean[f]) * inv[f];
                out[row * d + f] = vs[f] * xhat + vb[f];
            }
        }
        Tensor::new(vec![n, d], out).expect("bn output keeps input shape")
    }

    /// Accumulate gradients of a scalar loss with respect to every node the
    /// loss depends on. Visits each node exactly once, in reverse order.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (n, k) = (va.rows(), va.cols());
                    let m = vb.cols();
                    // dL/dA = g . B^T
                    let mut da = vec![0.0; n * k];
                    for r in 0..n {
                        for c in 0..m {
                            let gv = g.values()[r * m + c];
                            if gv == 0.0 {
                                continue;
                            }
                            for kk in 0..k {
                                da[r * k + kk] += gv * vb.values()[kk * m + c];
                            }
                        }
                    }
                    // dL/dB = A^T . g
                    let mut db = vec![0.0; k * m];
                    for r in 0..n {
                        for kk in 0..k {
                            let av = va.values()[r * k + kk];
                            if av == 0.0 {
                                continue;
                            }
                            for c in 0..m {
                                db[kk * m + c] += av * g.values()[r * m + c];
                            }
                        }
                    }
                    accumulate(&mut grads[a.0], va.shape(), &da);
                    accumulate(&mut grads[b.0], vb.shape(), &db);
                }
                Op::AddBias(x, bias) => {
                    let vx = &self.nodes[x.0].value;
                    let d = vx.cols();
                    let mut db = vec![0.0; d];
                    for (idx, &gv) in g.values().iter().enumerate() {
                        db[idx % d] += gv;
                    }
                    accumulate(&mut grads[x.0], vx.shape(), g.values());
                    accumulate(&mut grads[bias.0], &[d], &db);
                }
                Op::Add(a, b) => {
                    let shape = self.nodes[a.0].value.shape().to_vec();
                    accumulate(&mut grads[a.0], &shape, g.values());
                    accumulate(&mut grads[b.0], &shape, g.values());
                }
                Op::Sub(a, b) => {
                    let shape = self.nodes[a.0].value.shape().to_vec();
                    accumulate(&mut grads[a.0], &shape, g.values());
                    let neg: Vec<f64> = g.values().iter().map(|&v| -v).collect();
                    accumulate(&mut grads[b.0], &shape, &neg);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let da: Vec<f64> = g.values().iter().zip(vb.values()).map(|(&gv, &bv)| gv * bv).collect();
                    let db: Vec<f64> = g.values().iter().zip(va.values()).map(|(&gv, &av)| gv * av).collect();
                    accumulate(&mut grads[a.0], va.shape(), &da);
                    accumulate(&mut grads[b.0], vb.shape(), &db);
                }
                Op::Scale(x, k) => {
                    let dx: Vec<f64> = g.values().iter().map(|&v| v * k).collect();
                    accumulate(&mut grads[x.0], self.nodes[x.0].value.shape(), &dx);
                }
                Op::AddScalar(x) => {
                    accumulate(&mut grads[x.0], self.nodes[x.0].value.shape(), g.values());
                }
                Op::LeakyRelu(x, slope) => {
                    let vx = &self.nodes[x.0].value;
                    let dx: Vec<f64> = g
                        .values()
                        .iter()
                        .zip(vx.values())
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { gv * slope })
                        .collect();
                    accumulate(&mut grads[x.0], vx.shape(), &dx);
                }
                Op::Relu(x) => {
                    let vx = &self.nodes[x.0].value;
                    let dx: Vec<f64> = g
                        .values()
                        .iter()
                        .zip(vx.values())
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[x.0], vx.shape(), &dx);
                }
                Op::Abs(x) => {
                    let vx = &self.nodes[x.0].value;
                    let dx: Vec<f64> = g
                        .values()
                        .iter()
                        .zip(vx.values())
                        .map(|(&gv, &xv)| {
                            if xv > 0.0 {
                                gv
                            } else if xv < 0.0 {
                                -gv
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    accumulate(&mut grads[x.0], vx.shape(), &dx);
                }
                Op::Sigmoid(x) => {
                    // d sigma/dx = sigma (1 - sigma); the node value is sigma.
                    let vy = &self.nodes[i].value;
                    let dx: Vec<f64> = g
                        .values()
                        .iter()
                        .zip(vy.values())
                        .map(|(&gv, &yv)| gv * yv * (1.0 - yv))
                        .collect();
                    accumulate(&mut grads[x.0], self.nodes[x.0].value.shape(), &dx);
                }
                Op::BatchNormBatch { input, scale, shift, mean, var, eps } => {
                    let vx = &self.nodes[input.0].value;
                    let (n, d) = (vx.rows(), vx.cols());
                    let vs = self.nodes[scale.0].value.values();
                    let inv: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();

                    let mut dscale = vec![0.0; d];
                    let mut dshift = vec![0.0; d];
                    // Per-feature reductions of dxhat and dxhat * xhat, needed
                    // because the batch statistics depend on the input.
                    let mut sum_dxhat = vec![0.0; d];
                    let mut sum_dxhat_xhat = vec![0.0; d];
                    for row in 0..n {
                        for f in 0..d {
                            let gv = g.values()[row * d + f];
                            let xhat = (vx.values()[row * d + f] - mean[f]) * inv[f];
                            dshift[f] += gv;
                            dscale[f] += gv * xhat;
                            let dxhat = gv * vs[f];
                            sum_dxhat[f] += dxhat;
                            sum_dxhat_xhat[f] += dxhat * xhat;
                        }
                    }
                    let mut dx = vec![0.0; n * d];
                    let nf = n as f64;
                    for row in 0..n {
                        for f in 0..d {
                            let gv = g.values()[row * d + f];
                            let xhat = (vx.values()[row * d + f] - mean[f]) * inv[f];
                            let dxhat = gv * vs[f];
                            dx[row * d + f] =
                                inv[f] * (dxhat - sum_dxhat[f] / nf - xhat * sum_dxhat_xhat[f] / nf);
                        }
                    }
                    accumulate(&mut grads[input.0], vx.shape(), &dx);
                    accumulate(&mut grads[scale.0], &[d], &dscale);
                    accumulate(&mut grads[shift.0], &[d], &dshift);
                }
                Op::BatchNormFixed { input, scale, shift, mean, var, eps } => {
                    let vx = &self.nodes[input.0].value;
                    let (n, d) = (vx.rows(), vx.cols());
                    let vs = self.nodes[scale.0].value.values();
                    let inv: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
                    let mut dscale = vec![0.0; d];
                    let mut dshift = vec![0.0; d];
                    let mut dx = vec![0.0; n * d];
                    for row in 0..n {
                        for f in 0..d {
                            let gv = g.values()[row * d + f];
                            let xhat = (vx.values()[row * d + f] - mean[f]) * inv[f];
                            dshift[f] += gv;
                            dscale[f] += gv * xhat;
                            dx[row * d + f] = gv * vs[f] * inv[f];
                        }
                    }
                    accumulate(&mut grads[input.0], vx.shape(), &dx);
                    accumulate(&mut grads[scale.0], &[d], &dscale);
                    accumulate(&mut grads[shift.0], &[d], &dshift);
                }
                Op::Mean(x) => {
                    let vx = &self.nodes[x.0].value;
                    let gv = g.item() / vx.len() as f64;
                    let dx = vec![gv; vx.len()];
                    accumulate(&mut grads[x.0], vx.shape(), &dx);
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Add `delta` into the gradient slot, materializing it on first touch.
fn accumulate(slot: &mut Option<Tensor>, shape: &[usize], delta: &[f64]) {
    match slot {
        Some(t) => {
            for (o, &d) in t.values_mut().iter_mut().zip(delta) {
                *o += d;
            }
        }
        None => {
            *slot = Some(
                Tensor::new(shape.to_vec(), delta.to_vec()).expect("gradient matches node shape"),
            );
        }
    }
}
