//! Wengert-list reverse-mode autodiff.
//!
//! Every op appends a node holding its forward value. `backward` walks the
//! list in reverse, so consumers are always visited before producers.

use std::hash::{DefaultHasher, Hash, Hasher};

use super::conv::{conv_backward, conv_forward, gemm, ConvGeom};
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Probability clamp applied before every logarithm.
pub const PROB_EPS: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Softmax over the last axis, stabilized by subtracting the row max.
    Softmax,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Act(Activation, Var),
    Gather {
        input: Var,
        index: Vec<usize>,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    Add(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Bce {
        p: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
        weights: Vec<f64>,
    },
    SmoothL1 {
        x: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    spent: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zero-filled when `v` is not on a path to the loss.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.lens[v.0]],
        }
    }
}

fn weights_or_ones(weights: Option<&[f64]>, n: usize, op: &'static str) -> Result<Vec<f64>> {
    match weights {
        Some(w) if w.len() != n => Err(shape_err(op, format!("{} weights for {n} rows", w.len()))),
        Some(w) => Ok(w.to_vec()),
        None => Ok(vec![1.0; n]),
    }
}

fn split_rows(shape: &[usize]) -> (usize, usize) {
    let cols = *shape.last().unwrap_or(&1);
    (shape.iter().product::<usize>() / cols.max(1), cols)
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

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape values are validated")
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, name: &'static str) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Conv2d {
                input, kernel, bias, ..
            }
            | Op::Dense {
                input,
                weight: kernel,
                bias,
            } => self.any_grad(&[*input, *kernel, *bias]),
            Op::Act(_, x)
            | Op::Gather { input: x, .. }
            | Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Bce { p: x, .. }
            | Op::CrossEntropy { probs: x, .. }
            | Op::SmoothL1 { x, .. } => self.any_grad(&[*x]),
            Op::ConcatCols { parts } => self.any_grad(parts),
            Op::Add(a, b) => self.any_grad(&[*a, *b]),
        };
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Fingerprint of every branch taken on this tape: which ReLU inputs were
    /// positive, which probabilities hit the clamp, which smooth-L1 residuals
    /// were in the quadratic zone, plus the targets, labels and weights handed to
    /// the loss nodes (these carry data-dependent choices such as mined
    /// negatives). Equal signatures mean the same smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let bits = |h: &mut DefaultHasher, v: &[f64]| v.iter().for_each(|x| x.to_bits().hash(h));
        for node in &self.nodes {
            match &node.op {
                Op::Act(Activation::Relu, _) => node.value.iter().for_each(|&v| (v > 0.0).hash(&mut h)),
                Op::Bce { p, targets, weights } => {
                    self.value(*p)
                        .iter()
                        .for_each(|&v| (v < PROB_EPS, v > 1.0 - PROB_EPS).hash(&mut h));
                    bits(&mut h, targets);
                    bits(&mut h, weights);
                }
                Op::CrossEntropy { probs, labels, weights } => {
                    self.value(*probs).iter().for_each(|&v| (v < PROB_EPS).hash(&mut h));
                    labels.hash(&mut h);
                    bits(&mut h, weights);
                }
                Op::SmoothL1 { x, targets, weights } => {
                    self.value(*x)
                        .iter()
                        .zip(targets)
                        .for_each(|(&v, &t)| ((v - t).abs() < 1.0).hash(&mut h));
                    bits(&mut h, weights);
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Records `t` as a leaf; it receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            op: Op::Leaf,
            requires_grad: t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, value: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, value)?;
        Ok(self.leaf(&t))
    }

    /// Copies `v` into a new leaf that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = &self.nodes[v.0];
        let node = Node {
            shape: n.shape.clone(),
            value: n.value.clone(),
            op: Op::Leaf,
            requires_grad: false,
        };
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 4 || ks.len() != 4 {
            return Err(shape_err("conv2d", format!("input {xs:?}, kernel {ks:?}: both must be rank 4")));
        }
        if ks[1] != xs[1] {
            return Err(shape_err(
                "conv2d",
                format!("kernel {ks:?} expects {} input channels, input {xs:?} has {}", ks[1], xs[1]),
            ));
        }
        if self.shape(bias) != [ks[0]] {
            return Err(shape_err("conv2d", format!("bias {:?} for {} filters", self.shape(bias), ks[0])));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        if ks[2] > xs[2] + 2 * padding || ks[3] > xs[3] + 2 * padding {
            return Err(shape_err("conv2d", format!("kernel {ks:?} larger than padded input {xs:?}")));
        }
        let geom = ConvGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            k: ks[0],
            kh: ks[2],
            kw: ks[3],
            stride,
            pad: padding,
        };
        let (out, cols) = conv_forward(&geom, self.value(input), self.value(kernel), self.value(bias));
        let cols = if self.any_grad(&[input, kernel]) { cols } else { Vec::new() };
        self.push(
            vec![geom.n, geom.k, geom.out_h(), geom.out_w()],
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
            "conv2d",
        )
    }

    /// `input[N,D] · weight[D,E] + bias[E]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || self.shape(bias) != [ws[1]] {
            return Err(shape_err(
                "dense",
                format!("input {xs:?}, weight {ws:?}, bias {:?}", self.shape(bias)),
            ));
        }
        let (n, d, e) = (xs[0], xs[1], ws[1]);
        let mut out: Vec<f64> = self.value(bias).iter().copied().cycle().take(n * e).collect();
        gemm(
            n,
            d,
            e,
            self.value(input),
            d as isize,
            1,
            self.value(weight),
            e as isize,
            1,
            1.0,
            &mut out,
            e as isize,
            1,
        );
        self.push(vec![n, e], out, Op::Dense { input, weight, bias }, "dense")
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let xv = self.value(x);
        let out = match kind {
            Activation::Relu => xv.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Sigmoid => xv.iter().map(|&v| sigmoid(v)).collect(),
            Activation::Softmax => {
                let (_, cols) = split_rows(&shape);
                let mut out = xv.to_vec();
                for row in out.chunks_mut(cols) {
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - m).exp();
                        s += *v;
                    }
                    row.iter_mut().for_each(|v| *v /= s);
                }
                out
            }
        };
        let name = match kind {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
        };
        self.push(shape, out, Op::Act(kind, x), name)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Sigmoid, x)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Softmax, x)
    }

    /// `out[i] = input[index[i]]`, reshaped to `shape`. Covers permutes, slices and reshapes.
    pub fn gather(&mut self, input: Var, index: Vec<usize>, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let n = self.value(input).len();
        if shape.iter().product::<usize>() != index.len() {
            return Err(shape_err("gather", format!("{} indices for shape {shape:?}", index.len())));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(shape_err("gather", format!("index {bad} out of range {n}")));
        }
        let xv = self.value(input);
        let out = index.iter().map(|&i| xv[i]).collect();
        self.push(shape, out, Op::Gather { input, index }, "gather")
    }

    pub fn reshape(&mut self, input: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let n = self.value(input).len();
        self.gather(input, (0..n).collect(), shape)
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err("concat_cols", "no inputs"))?;
        let rows = self.shape(*first)[0];
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != 2 || s[0] != rows {
                return Err(shape_err("concat_cols", format!("part {s:?} with {rows} rows")));
            }
            total += s[1];
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let c = self.shape(*p)[1];
                out.extend_from_slice(&self.value(*p)[r * c..(r + 1) * c]);
            }
        }
        self.push(vec![rows, total], out, Op::ConcatCols { parts: parts.to_vec() }, "concat_cols")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(self.shape(a).to_vec(), out, Op::Add(a, b), "add")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v * c).collect();
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, c), "scale")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// `Σ_i w_i · [−t_i ln p_i − (1−t_i) ln(1−p_i)]` with `p` clamped to `[ε, 1−ε]`.
    pub fn bce(&mut self, p: Var, targets: &[f64], weights: Option<&[f64]>) -> Result<Var> {
        let n = self.value(p).len();
        if targets.len() != n {
            return Err(shape_err("bce", format!("{} targets for {n} probabilities", targets.len())));
        }
        let weights = weights_or_ones(weights, n, "bce")?;
        let total = self
            .value(p)
            .iter()
            .zip(targets)
            .zip(&weights)
            .map(|((&p, &t), &w)| {
                let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
                w * (-t * pc.ln() - (1.0 - t) * (1.0 - pc).ln())
            })
            .sum();
        self.push(
            vec![1],
            vec![total],
            Op::Bce {
                p,
                targets: targets.to_vec(),
                weights,
            },
            "bce",
        )
    }

    /// `Σ_i w_i · (−ln p_{i, label_i})` over rows of a `[M, C]` probability matrix.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize], weights: Option<&[f64]>) -> Result<Var> {
        let (rows, classes) = split_rows(self.shape(probs));
        if labels.len() != rows {
            return Err(shape_err("cross_entropy", format!("{} labels for {rows} rows", labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let weights = weights_or_ones(weights, rows, "cross_entropy")?;
        let pv = self.value(probs);
        let total = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| weights[i] * -pv[i * classes + l].clamp(PROB_EPS, 1.0).ln())
            .sum();
        self.push(
            vec![1],
            vec![total],
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
                weights,
            },
            "cross_entropy",
        )
    }

    /// `Σ_i w_i · Σ_k huber(x_ik − t_ik)` with the unit-threshold smooth-L1 kernel.
    pub fn smooth_l1(&mut self, x: Var, targets: &[f64], row_weights: Option<&[f64]>) -> Result<Var> {
        let (rows, cols) = split_rows(self.shape(x));
        if targets.len() != rows * cols {
            return Err(shape_err("smooth_l1", format!("{} targets for {} values", targets.len(), rows * cols)));
        }
        let weights = weights_or_ones(row_weights, rows, "smooth_l1")?;
        let xv = self.value(x);
        let total = (0..rows * cols)
            .map(|i| weights[i / cols] * smooth_l1(xv[i] - targets[i]))
            .sum();
        self.push(
            vec![1],
            vec![total],
            Op::SmoothL1 {
                x,
                targets: targets.to_vec(),
                weights,
            },
            "smooth_l1",
        )
    }

    /// Reverse sweep from a scalar `loss`. A tape can be swept only once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.spent {
            return Err(Error::BackwardReplayed);
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        self.spent = true;
        let lens: Vec<usize> = self.nodes.iter().map(|n| n.value.len()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.backprop_node(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }

        for g in grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("backward"));
            }
        }
        Ok(Gradients { grads, lens })
    }

    fn backprop_node(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let kv = &nodes[kernel.0].value;
                if wants(*input) {
                    let di = slot(grads, nodes, *input);
                    conv_backward(geom, cols, kv, dy, Some(di), None, None);
                }
                if wants(*kernel) {
                    let dk = slot(grads, nodes, *kernel);
                    conv_backward(geom, cols, kv, dy, None, Some(dk), None);
                }
                if wants(*bias) {
                    let db = slot(grads, nodes, *bias);
                    conv_backward(geom, cols, kv, dy, None, None, Some(db));
                }
            }
            Op::Dense { input, weight, bias } => {
                let (n, d) = (nodes[input.0].shape[0], nodes[input.0].shape[1]);
                let e = nodes[weight.0].shape[1];
                if wants(*input) {
                    // dX[N,D] += dY[N,E] · W^T[E,D]
                    let dx = slot(grads, nodes, *input);
                    gemm(n, e, d, dy, e as isize, 1, &nodes[weight.0].value, 1, e as isize, 1.0, dx, d as isize, 1);
                }
                if wants(*weight) {
                    // dW[D,E] += X^T[D,N] · dY[N,E]
                    let dw = slot(grads, nodes, *weight);
                    gemm(d, n, e, &nodes[input.0].value, 1, d as isize, dy, e as isize, 1, 1.0, dw, e as isize, 1);
                }
                if wants(*bias) {
                    let db = slot(grads, nodes, *bias);
                    for row in dy.chunks(e) {
                        db.iter_mut().zip(row).for_each(|(b, g)| *b += g);
                    }
                }
            }
            Op::Act(kind, x) => {
                if !wants(*x) {
                    return;
                }
                let y = &node.value;
                let dx = slot(grads, nodes, *x);
                match kind {
                    Activation::Relu => {
                        for ((d, &g), &o) in dx.iter_mut().zip(dy).zip(y) {
                            if o > 0.0 {
                                *d += g;
                            }
                        }
                    }
                    Activation::Sigmoid => {
                        for ((d, &g), &o) in dx.iter_mut().zip(dy).zip(y) {
                            *d += g * o * (1.0 - o);
                        }
                    }
                    Activation::Softmax => {
                        let (_, cols) = split_rows(&node.shape);
                        for ((drow, grow), yrow) in dx.chunks_mut(cols).zip(dy.chunks(cols)).zip(y.chunks(cols)) {
                            let dot: f64 = grow.iter().zip(yrow).map(|(g, o)| g * o).sum();
                            for ((d, &g), &o) in drow.iter_mut().zip(grow).zip(yrow) {
                                *d += o * (g - dot);
                            }
                        }
                    }
                }
            }
            Op::Gather { input, index } => {
                if wants(*input) {
                    let dx = slot(grads, nodes, *input);
                    for (&i, &g) in index.iter().zip(dy) {
                        dx[i] += g;
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let rows = node.shape[0];
                let total = node.shape[1];
                let mut offset = 0;
                for p in parts {
                    let c = nodes[p.0].shape[1];
                    if wants(*p) {
                        let dp = slot(grads, nodes, *p);
                        for r in 0..rows {
                            for k in 0..c {
                                dp[r * c + k] += dy[r * total + offset + k];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        let dv = slot(grads, nodes, v);
                        dv.iter_mut().zip(dy).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Scale(x, c) => {
                if wants(*x) {
                    let dx = slot(grads, nodes, *x);
                    dx.iter_mut().zip(dy).for_each(|(d, g)| *d += g * c);
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    let dx = slot(grads, nodes, *x);
                    dx.iter_mut().for_each(|d| *d += dy[0]);
                }
            }
            Op::Bce { p, targets, weights } => {
                if wants(*p) {
                    let pv = &nodes[p.0].value;
                    let dp = slot(grads, nodes, *p);
                    for i in 0..pv.len() {
                        let q = pv[i];
                        if q < PROB_EPS || q > 1.0 - PROB_EPS {
                            continue;
                        }
                        let t = targets[i];
                        dp[i] += dy[0] * weights[i] * (-t / q + (1.0 - t) / (1.0 - q));
                    }
                }
            }
            Op::CrossEntropy { probs, labels, weights } => {
                if wants(*probs) {
                    let classes = *nodes[probs.0].shape.last().unwrap_or(&1);
                    let pv = &nodes[probs.0].value;
                    let dp = slot(grads, nodes, *probs);
                    for (i, &l) in labels.iter().enumerate() {
                        let q = pv[i * classes + l];
                        if q >= PROB_EPS {
                            dp[i * classes + l] -= dy[0] * weights[i] / q;
                        }
                    }
                }
            }
            Op::SmoothL1 { x, targets, weights } => {
                if wants(*x) {
                    let cols = *nodes[x.0].shape.last().unwrap_or(&1);
                    let xv = &nodes[x.0].value;
                    let dx = slot(grads, nodes, *x);
                    for i in 0..xv.len() {
                        let d = xv[i] - targets[i];
                        let g = if d.abs() < 1.0 { d } else { d.signum() };
                        dx[i] += dy[0] * weights[i / cols] * g;
                    }
                }
            }
        }
    }
}

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'g mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn smooth_l1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn conv_examples() {
        let mut t = Tape::new();
        let x = t.constant([1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let k = t.constant([1, 1, 1, 1], vec![2.]).unwrap();
        let b = t.constant([1], vec![0.]).unwrap();
        let y = t.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(t.value(y), &[2., 4., 6., 8.]);

        let x = t.constant([1, 1, 3, 3], vec![1.; 9]).unwrap();
        let k = t.constant([1, 1, 3, 3], vec![1.; 9]).unwrap();
        let y = t.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(t.shape(y), &[1, 1, 1, 1]);
        assert_eq!(t.value(y), &[9.]);
    }

    #[test]
    fn conv_identity_kernel_is_exact() {
        let mut t = Tape::new();
        let data: Vec<f64> = (0..2 * 5 * 4).map(|i| (i as f64).sin() * 3.7).collect();
        let x = t.constant([1, 2, 5, 4], data.clone()).unwrap();
        // Per-channel identity: filter c picks channel c at the center tap.
        let mut kv = vec![0.0; 2 * 2 * 9];
        kv[4] = 1.0;
        kv[(2 + 1) * 9 + 4] = 1.0;
        let k = t.constant([2, 2, 3, 3], kv).unwrap();
        let b = t.constant([2], vec![0.; 2]).unwrap();
        let y = t.conv2d(x, k, b, 1, 1).unwrap();
        assert_eq!(t.value(y), data.as_slice());
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut t = Tape::new();
        let x = t.constant([1, 3, 4, 4], vec![0.; 48]).unwrap();
        let k = t.constant([2, 2, 3, 3], vec![0.; 36]).unwrap();
        let b = t.constant([2], vec![0.; 2]).unwrap();
        let err = t.conv2d(x, k, b, 1, 1).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
    }

    #[test]
    fn dense_examples() {
        let mut t = Tape::new();
        let x = t.constant([1, 2], vec![1., 2.]).unwrap();
        let w = t.constant([2, 2], vec![1., 0., 0., 1.]).unwrap();
        let b = t.constant([2], vec![0., 0.]).unwrap();
        let y = t.dense(x, w, b).unwrap();
        assert_eq!(t.value(y), &[1., 2.]);

        let x = t.constant([1, 2], vec![1., 1.]).unwrap();
        let w = t.constant([2, 1], vec![1., -1.]).unwrap();
        let b = t.constant([1], vec![3.]).unwrap();
        let y = t.dense(x, w, b).unwrap();
        assert_eq!(t.value(y), &[3.]);

        let x = t.constant([1, 2], vec![2., 3.]).unwrap();
        let w = t.constant([2, 2], vec![1., 0., 0., 2.]).unwrap();
        let b = t.constant([2], vec![1., 1.]).unwrap();
        let y = t.dense(x, w, b).unwrap();
        assert_eq!(t.value(y), &[3., 7.]);

        let bad = t.constant([3, 1], vec![0.; 3]).unwrap();
        assert!(t.dense(x, bad, b).is_err());
    }

    #[test]
    fn activation_examples() {
        let mut t = Tape::new();
        let x = t.constant([3], vec![-1., 0., 2.]).unwrap();
        let r = t.relu(x).unwrap();
        assert_eq!(t.value(r), &[0., 0., 2.]);
        let z = t.constant([1], vec![0.]).unwrap();
        let s = t.sigmoid(z).unwrap();
        assert_eq!(t.value(s), &[0.5]);
        let z = t.constant([1, 2], vec![0., 0.]).unwrap();
        let s = t.softmax(z).unwrap();
        assert_eq!(t.value(s), &[0.5, 0.5]);
        let z = t.constant([1, 2], vec![1000., 0.]).unwrap();
        let s = t.softmax(z).unwrap();
        assert!(t.value(s).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn loss_primitive_examples() {
        assert_eq!(smooth_l1(0.0), 0.0);
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        let mut t = Tape::new();
        let p = t.constant([1], vec![0.5]).unwrap();
        let l = t.bce(p, &[1.0], None).unwrap();
        assert!(close(t.scalar(l), std::f64::consts::LN_2, 1e-12));
        let q = t.constant([1, 2], vec![0.5, 0.5]).unwrap();
        let l = t.cross_entropy(q, &[1], None).unwrap();
        assert!(close(t.scalar(l), std::f64::consts::LN_2, 1e-12));
        assert!(matches!(
            t.cross_entropy(q, &[2], None),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
        let x = t.constant([1, 3], vec![0.0, 0.5, 2.0]).unwrap();
        let l = t.smooth_l1(x, &[0.0; 3], None).unwrap();
        assert!(close(t.scalar(l), 1.625, 1e-15));
    }

    #[test]
    fn bce_saturation_stays_finite() {
        let mut t = Tape::new();
        let p = t.constant([2], vec![0.0, 1.0]).unwrap();
        let l = t.bce(p, &[1.0, 0.0], None).unwrap();
        let want = -2.0 * PROB_EPS.ln();
        assert!(close(t.scalar(l), want, 1e-9));
    }

    #[test]
    fn backward_linear_map() {
        let mut t = Tape::new();
        let x = t.leaf(&Tensor::new([2, 3], vec![1., -2., 3., 0.5, 7., 1.]).unwrap().with_grad());
        let y = t.scale(x, 3.0).unwrap();
        let l = t.sum(y).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(x), vec![3.0; 6]);
    }

    #[test]
    fn backward_bce_sigmoid_at_zero() {
        let mut t = Tape::new();
        let z = t.leaf(&Tensor::new([1], vec![0.0]).unwrap().with_grad());
        let p = t.sigmoid(z).unwrap();
        let l = t.bce(p, &[1.0], None).unwrap();
        let g = t.backward(l).unwrap();
        assert!(close(g.wrt(z)[0], -0.5, 1e-12));
    }

    #[test]
    fn backward_rules() {
        let mut t = Tape::new();
        let x = t.leaf(&Tensor::new([2], vec![1.0, 2.0]).unwrap().with_grad());
        let unused = t.leaf(&Tensor::new([3], vec![1.0; 3]).unwrap().with_grad());
        let nonscalar = t.scale(x, 2.0).unwrap();
        assert!(matches!(t.backward(nonscalar), Err(Error::NonScalarLoss(_))));
        let l = t.sum(x).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(unused), vec![0.0; 3]);
        assert!(matches!(t.backward(l), Err(Error::BackwardReplayed)));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(&Tensor::new([2], vec![1.0, 2.0]).unwrap().with_grad());
        let d = t.detach(x);
        let s = t.add(x, d).unwrap();
        let l = t.sum(s).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(x), vec![1.0, 1.0]);
        assert!(g.get(d).is_none());
    }

    #[test]
    fn add_same_var_twice() {
        let mut t = Tape::new();
        let x = t.leaf(&Tensor::new([2], vec![1.0, 2.0]).unwrap().with_grad());
        let s = t.add(x, x).unwrap();
        let l = t.sum(s).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(x), vec![2.0, 2.0]);
    }
}
