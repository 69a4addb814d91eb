//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Tape`] owns every value produced during one forward pass. Operations
//! append nodes in execution order, so the node list is already topologically
//! sorted and [`Tape::backward`] simply walks it in reverse. A tape may be
//! differentiated once; a new forward pass starts from a fresh tape.

mod gradcheck;
pub(crate) mod kernels;

use std::sync::Arc;

pub use gradcheck::{grad_check, GradCheck};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use kernels::{col2im, gemm, im2col, ConvGeom};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Fixed sparse linear resampling: output cell `o` of every channel is
/// `sum_k weight_k * input[channel, index_k]` over the cell's taps.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingPlan {
    pub(crate) in_h: usize,
    pub(crate) in_w: usize,
    pub(crate) out_h: usize,
    pub(crate) out_w: usize,
    /// `offsets[o]..offsets[o + 1]` are the taps of output cell `o`.
    pub(crate) offsets: Vec<usize>,
    pub(crate) taps: Vec<(usize, f64)>,
}

impl SamplingPlan {
    pub(crate) fn apply(&self, input: &[f64], channels: usize) -> Vec<f64> {
        let in_plane = self.in_h * self.in_w;
        let out_plane = self.out_h * self.out_w;
        let mut out = vec![0.0; channels * out_plane];
        for c in 0..channels {
            let src = &input[c * in_plane..(c + 1) * in_plane];
            let dst = &mut out[c * out_plane..(c + 1) * out_plane];
            for (o, d) in dst.iter_mut().enumerate() {
                let mut acc = 0.0;
                for &(i, w) in &self.taps[self.offsets[o]..self.offsets[o + 1]] {
                    acc += w * src[i];
                }
                *d = acc;
            }
        }
        out
    }

    pub(crate) fn apply_adjoint(&self, grad_out: &[f64], channels: usize, grad_in: &mut [f64]) {
        let in_plane = self.in_h * self.in_w;
        let out_plane = self.out_h * self.out_w;
        for c in 0..channels {
            let src = &grad_out[c * out_plane..(c + 1) * out_plane];
            let dst = &mut grad_in[c * in_plane..(c + 1) * in_plane];
            for (o, g) in src.iter().enumerate() {
                for &(i, w) in &self.taps[self.offsets[o]..self.offsets[o + 1]] {
                    dst[i] += w * g;
                }
            }
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
        out_channels: usize,
    },
    /// `geom` describes the equivalent forward convolution from the output
    /// back to the input.
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
        in_channels: usize,
    },
    BiasAdd {
        input: Var,
        bias: Var,
        axis: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    Sum(Var),
    Mean(Var),
    MatMul(Var, Var),
    Reshape(Var),
    Transpose2d(Var),
    Concat(Vec<Var>),
    GatherRows {
        input: Var,
        rows: Vec<usize>,
    },
    Upsample2x(Var),
    Resample {
        input: Var,
        plan: Arc<SamplingPlan>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
    },
    BceWithLogits {
        logits: Var,
        targets: Tensor,
    },
    SmoothL1 {
        pred: Var,
        target: Tensor,
        beta: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// The computation record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backpropagated: bool,
}

/// Splits a shape around `axis` into `(outer, axis_len, inner)`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf; its gradient is available after backward.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies a value into a new constant leaf, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass, if `v` requires one.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Cross-correlation of `[C_in,H,W]` with `[C_out,C_in,kh,kw]`, zero padded.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        let kshape = self.shape(kernel).to_vec();
        let [oc, kc, kh, kw] = kshape[..] else {
            return Err(Error::dim(format!("conv2d kernel must be 4-D, got {kshape:?}")));
        };
        if kc != c {
            return Err(Error::dim(format!(
                "conv2d input has {c} channels, kernel expects {kc}"
            )));
        }
        let geom = ConvGeom::new(c, h, w, kh, kw, stride, padding).ok_or_else(|| {
            Error::dim(format!(
                "conv2d kernel {kh}x{kw} stride {stride} does not fit {h}x{w} padded by {padding}"
            ))
        })?;
        let cols = im2col(self.value(input).data(), &geom);
        let mut out = vec![0.0; oc * geom.col_cols()];
        gemm(
            oc,
            geom.col_rows(),
            geom.col_cols(),
            self.value(kernel).data(),
            false,
            &cols,
            false,
            &mut out,
            0.0,
        );
        let value = Tensor::new([oc, geom.out_h, geom.out_w], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                geom,
                out_channels: oc,
            },
            &[input, kernel],
        ))
    }

    /// Fractionally strided convolution: the adjoint of an unpadded strided
    /// [`conv2d`](Self::conv2d) whose kernel is `[C_in,C_out,kh,kw]`.
    pub fn conv2d_transpose(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        let kshape = self.shape(kernel).to_vec();
        let [kc, oc, kh, kw] = kshape[..] else {
            return Err(Error::dim(format!(
                "conv2d_transpose kernel must be 4-D, got {kshape:?}"
            )));
        };
        if kc != c {
            return Err(Error::dim(format!(
                "conv2d_transpose input has {c} channels, kernel expects {kc}"
            )));
        }
        if stride == 0 {
            return Err(Error::arg("stride must be at least 1"));
        }
        let out_h = (h - 1) * stride + kh;
        let out_w = (w - 1) * stride + kw;
        let geom = ConvGeom::new(oc, out_h, out_w, kh, kw, stride, 0)
            .expect("transpose geometry always fits");
        debug_assert_eq!((geom.out_h, geom.out_w), (h, w));
        // cols[oc*kh*kw, h*w] = K^T x
        let mut cols = vec![0.0; geom.col_rows() * geom.col_cols()];
        gemm(
            geom.col_rows(),
            c,
            geom.col_cols(),
            self.value(kernel).data(),
            true,
            self.value(input).data(),
            false,
            &mut cols,
            0.0,
        );
        let mut out = vec![0.0; oc * out_h * out_w];
        col2im(&cols, &geom, &mut out);
        let value = Tensor::new([oc, out_h, out_w], out)?;
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                input,
                kernel,
                geom,
                in_channels: c,
            },
            &[input, kernel],
        ))
    }

    /// Adds `bias[i]` to every element whose index along `axis` is `i`.
    pub fn bias_add(&mut self, input: Var, bias: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() || self.value(bias).numel() != shape[axis] {
            return Err(Error::dim(format!(
                "bias of {} values cannot be added along axis {axis} of {shape:?}",
                self.value(bias).numel()
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let b = self.value(bias).data();
        let mut out = self.value(input).data().to_vec();
        for o in 0..outer {
            for (i, bi) in b.iter().enumerate().take(n) {
                let base = (o * n + i) * inner;
                for v in &mut out[base..base + inner] {
                    *v += bi;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::BiasAdd { input, bias, axis }, &[input, bias]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let x = self.value(a);
        let data = x
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_with(a, b, |p, q| p + q);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_with(a, b, |p, q| p - q);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_with(a, b, |p, q| p * q);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("softmax axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let x = self.value(input).data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let max = (0..n).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..n {
                    let e = (x[at(k)] - max).exp();
                    out[at(k)] = e;
                    total += e;
                }
                for k in 0..n {
                    out[at(k)] /= total;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Softmax { input, axis }, &[input]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.data().iter().sum::<f64>() / x.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (&[m, k], &[k2, n]) = (&sa[..], &sb[..]) else {
            return Err(Error::dim(format!("matmul needs 2-D operands, got {sa:?} and {sb:?}")));
        };
        if k != k2 {
            return Err(Error::dim(format!("matmul inner extents differ: {sa:?} x {sb:?}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let value = Tensor::new([m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    pub fn transpose2d(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let [r, c] = s[..] else {
            return Err(Error::dim(format!("transpose2d needs a 2-D operand, got {s:?}")));
        };
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        let value = Tensor::new([c, r], out)?;
        Ok(self.push(value, Op::Transpose2d(a), &[a]))
    }

    /// Concatenates along the first axis; trailing extents must agree.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(Error::arg("concat of zero tensors"));
        };
        let tail = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &v in inputs {
            let s = self.shape(v);
            if s[1..] != tail[..] {
                return Err(Error::dim(format!(
                    "concat trailing extents differ: {:?} vs {:?}",
                    self.shape(first),
                    s
                )));
            }
            lead += s[0];
            data.extend_from_slice(self.value(v).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat(inputs.to_vec()), inputs))
    }

    /// Selects slices along the first axis (repeats allowed).
    pub fn gather_rows(&mut self, input: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if rows.is_empty() {
            return Err(Error::arg("gather_rows with no rows"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= s[0]) {
            return Err(Error::dim(format!("row {bad} out of range for {s:?}")));
        }
        let stride: usize = s[1..].iter().product();
        let x = self.value(input).data();
        let mut data = Vec::with_capacity(rows.len() * stride);
        for &r in rows {
            data.extend_from_slice(&x[r * stride..(r + 1) * stride]);
        }
        let mut shape = s.clone();
        shape[0] = rows.len();
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                input,
                rows: rows.to_vec(),
            },
            &[input],
        ))
    }

    /// Nearest-neighbour 2x upsampling of `[C,H,W]`.
    pub fn upsample2x(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = self.value(a).chw()?;
        let x = self.value(a).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[(ch * oh + y) * ow + xx] = x[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor::new([c, oh, ow], out)?;
        Ok(self.push(value, Op::Upsample2x(a), &[a]))
    }

    /// Applies a precomputed [`SamplingPlan`] to every channel of `[C,H,W]`.
    pub fn resample(&mut self, input: Var, plan: Arc<SamplingPlan>) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        if (h, w) != (plan.in_h, plan.in_w) {
            return Err(Error::dim(format!(
                "sampling plan built for {}x{}, input is {h}x{w}",
                plan.in_h, plan.in_w
            )));
        }
        let out = plan.apply(self.value(input).data(), c);
        let value = Tensor::new([c, plan.out_h, plan.out_w], out)?;
        Ok(self.push(value, Op::Resample { input, plan }, &[input]))
    }

    /// Mean softmax cross-entropy of `[N,K]` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        let [n, k] = s[..] else {
            return Err(Error::dim(format!("cross_entropy logits must be [N,K], got {s:?}")));
        };
        if targets.len() != n {
            return Err(Error::dim(format!("{n} logit rows but {} targets", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::arg(format!("target class {bad} outside 0..{k}")));
        }
        let x = self.value(logits).data();
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = &x[i * k..(i + 1) * k];
            total += log_sum_exp(row) - row[t];
        }
        let value = Tensor::scalar(total / n as f64);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    /// Mean binary cross-entropy of logits against targets in `[0,1]`.
    pub fn binary_cross_entropy(&mut self, logits: Var, targets: Tensor) -> Result<Var> {
        if self.shape(logits) != targets.shape() {
            return Err(Error::dim(format!(
                "bce logits {:?} vs targets {:?}",
                self.shape(logits),
                targets.shape()
            )));
        }
        let x = self.value(logits).data();
        let total: f64 = x
            .iter()
            .zip(targets.data())
            .map(|(&z, &t)| bce_term(z, t))
            .sum();
        let value = Tensor::scalar(total / x.len() as f64);
        Ok(self.push(value, Op::BceWithLogits { logits, targets }, &[logits]))
    }

    /// Mean smooth-L1 (Huber with transition `beta`) between `pred` and `target`.
    pub fn smooth_l1(&mut self, pred: Var, target: Tensor, beta: f64) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(Error::dim(format!(
                "smooth_l1 pred {:?} vs target {:?}",
                self.shape(pred),
                target.shape()
            )));
        }
        if beta <= 0.0 {
            return Err(Error::arg("smooth_l1 beta must be positive"));
        }
        let x = self.value(pred).data();
        let total: f64 = x
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| smooth_l1_term(p - t, beta))
            .sum();
        let value = Tensor::scalar(total / x.len() as f64);
        Ok(self.push(value, Op::SmoothL1 { pred, target, beta }, &[pred]))
    }

    /// Propagates `d loss / d node` to every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backpropagated {
            return Err(Error::Autograd(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Autograd(format!(
                "loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backpropagated = true;
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads);
            self.nodes[id].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn like(&self, v: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), data).expect("gradient matches value shape")
    }

    fn backprop_node(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                geom,
                out_channels,
            } => {
                let cols = im2col(self.value(*input).data(), geom);
                if self.requires_grad(*kernel) {
                    let mut dk = vec![0.0; out_channels * geom.col_rows()];
                    gemm(
                        *out_channels,
                        geom.col_cols(),
                        geom.col_rows(),
                        gd,
                        false,
                        &cols,
                        true,
                        &mut dk,
                        0.0,
                    );
                    self.accumulate(grads, *kernel, self.like(*kernel, dk));
                }
                if self.requires_grad(*input) {
                    let mut dcols = vec![0.0; geom.col_rows() * geom.col_cols()];
                    gemm(
                        geom.col_rows(),
                        *out_channels,
                        geom.col_cols(),
                        self.value(*kernel).data(),
                        true,
                        gd,
                        false,
                        &mut dcols,
                        0.0,
                    );
                    let mut dx = vec![0.0; self.value(*input).numel()];
                    col2im(&dcols, geom, &mut dx);
                    self.accumulate(grads, *input, self.like(*input, dx));
                }
            }
            Op::ConvTranspose2d {
                input,
                kernel,
                geom,
                in_channels,
            } => {
                let gcols = im2col(gd, geom);
                if self.requires_grad(*input) {
                    let mut dx = vec![0.0; in_channels * geom.col_cols()];
                    gemm(
                        *in_channels,
                        geom.col_rows(),
                        geom.col_cols(),
                        self.value(*kernel).data(),
                        false,
                        &gcols,
                        false,
                        &mut dx,
                        0.0,
                    );
                    self.accumulate(grads, *input, self.like(*input, dx));
                }
                if self.requires_grad(*kernel) {
                    let mut dk = vec![0.0; in_channels * geom.col_rows()];
                    gemm(
                        *in_channels,
                        geom.col_cols(),
                        geom.col_rows(),
                        self.value(*input).data(),
                        false,
                        &gcols,
                        true,
                        &mut dk,
                        0.0,
                    );
                    self.accumulate(grads, *kernel, self.like(*kernel, dk));
                }
            }
            Op::BiasAdd { input, bias, axis } => {
                self.accumulate(grads, *input, g.clone());
                if self.requires_grad(*bias) {
                    let (outer, n, inner) = split_axis(g.shape(), *axis);
                    let mut db = vec![0.0; n];
                    for o in 0..outer {
                        for (i, d) in db.iter_mut().enumerate() {
                            let base = (o * n + i) * inner;
                            *d += gd[base..base + inner].iter().sum::<f64>();
                        }
                    }
                    self.accumulate(grads, *bias, self.like(*bias, db));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let da = gd.iter().zip(vb).map(|(g, y)| g * y).collect();
                let db = gd.iter().zip(va).map(|(g, x)| g * x).collect();
                self.accumulate(grads, *a, self.like(*a, da));
                self.accumulate(grads, *b, self.like(*b, db));
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| x * s)),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, self.like(*a, d));
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.accumulate(grads, *a, self.like(*a, d));
            }
            Op::Softmax { input, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                let mut d = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let dot: f64 = (0..n).map(|k| gd[at(k)] * y[at(k)]).sum();
                        for k in 0..n {
                            d[at(k)] = y[at(k)] * (gd[at(k)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *input, self.like(*input, d));
            }
            Op::Sum(a) => {
                let v = Tensor::full(self.shape(*a), gd[0]);
                self.accumulate(grads, *a, v);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                let v = Tensor::full(self.shape(*a), gd[0] / n);
                self.accumulate(grads, *a, v);
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, self.value(*b).data(), true, &mut da, 0.0);
                    self.accumulate(grads, *a, self.like(*a, da));
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, gd, false, &mut db, 0.0);
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::Reshape(a) => self.accumulate(grads, *a, self.like(*a, gd.to_vec())),
            Op::Transpose2d(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] = gd[j * r + i];
                    }
                }
                self.accumulate(grads, *a, self.like(*a, d));
            }
            Op::Concat(inputs) => {
                let mut offset = 0;
                for &v in inputs {
                    let n = self.value(v).numel();
                    self.accumulate(grads, v, self.like(v, gd[offset..offset + n].to_vec()));
                    offset += n;
                }
            }
            Op::GatherRows { input, rows } => {
                let s = self.shape(*input);
                let stride: usize = s[1..].iter().product();
                let mut d = vec![0.0; self.value(*input).numel()];
                for (k, &r) in rows.iter().enumerate() {
                    for (dst, src) in d[r * stride..(r + 1) * stride]
                        .iter_mut()
                        .zip(&gd[k * stride..(k + 1) * stride])
                    {
                        *dst += src;
                    }
                }
                self.accumulate(grads, *input, self.like(*input, d));
            }
            Op::Upsample2x(a) => {
                let (c, h, w) = self.value(*a).chw().expect("3-D");
                let (oh, ow) = (2 * h, 2 * w);
                let mut d = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..oh {
                        for x in 0..ow {
                            d[(ch * h + y / 2) * w + x / 2] += gd[(ch * oh + y) * ow + x];
                        }
                    }
                }
                self.accumulate(grads, *a, self.like(*a, d));
            }
            Op::Resample { input, plan } => {
                let c = self.shape(*input)[0];
                let mut d = vec![0.0; self.value(*input).numel()];
                plan.apply_adjoint(gd, c, &mut d);
                self.accumulate(grads, *input, self.like(*input, d));
            }
            Op::CrossEntropy { logits, targets } => {
                let k = self.shape(*logits)[1];
                let n = targets.len() as f64;
                let x = self.value(*logits).data();
                let mut d = vec![0.0; x.len()];
                for (i, &t) in targets.iter().enumerate() {
                    let row = &x[i * k..(i + 1) * k];
                    let lse = log_sum_exp(row);
                    for j in 0..k {
                        let p = (row[j] - lse).exp();
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        d[i * k + j] = gd[0] * (p - onehot) / n;
                    }
                }
                self.accumulate(grads, *logits, self.like(*logits, d));
            }
            Op::BceWithLogits { logits, targets } => {
                let x = self.value(*logits).data();
                let n = x.len() as f64;
                let d = x
                    .iter()
                    .zip(targets.data())
                    .map(|(&z, &t)| gd[0] * (sigmoid(z) - t) / n)
                    .collect();
                self.accumulate(grads, *logits, self.like(*logits, d));
            }
            Op::SmoothL1 { pred, target, beta } => {
                let x = self.value(*pred).data();
                let n = x.len() as f64;
                let d = x
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &t)| {
                        let r = p - t;
                        let slope = if r.abs() < *beta { r / beta } else { r.signum() };
                        gd[0] * slope / n
                    })
                    .collect();
                self.accumulate(grads, *pred, self.like(*pred, d));
            }
        }
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `-t ln s(z) - (1-t) ln(1 - s(z))` in a form that never overflows.
pub(crate) fn bce_term(z: f64, t: f64) -> f64 {
    z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()
}

pub(crate) fn smooth_l1_term(r: f64, beta: f64) -> f64 {
    let a = r.abs();
    if a < beta {
        0.5 * a * a / beta
    } else {
        a - 0.5 * beta
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}
