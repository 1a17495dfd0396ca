//! Dense float64 tensors and the layer primitives BaseNet is built from.
//!
//! Every primitive comes as a pure forward function plus an explicit
//! backward kernel. [`Tape`] strings them together and replays the
//! backward kernels in reverse order.

use std::borrow::Cow;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("gradient tape has already been consumed by a backward pass")]
    TapeConsumed,
    #[error("backward on an empty tape")]
    EmptyTape,
}

pub type Result<T> = std::result::Result<T, TensorError>;

fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Shape {
        op,
        detail: detail.into(),
    }
}

/// Row-major dense array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(shape_err("new", format!("zero-sized dimension in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(shape_err(
                "new",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// One-dimensional tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
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

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Tensor, factor: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err(
                "add_scaled",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        axpy(factor, &other.data, &mut self.data);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.data)
    }
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent accumulators so the loop vectorizes
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.shape.len() != rank {
        return Err(shape_err(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// fully connected

/// `W·x + b` for `W` of shape `[n_out, n_in]`.
pub fn fc_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    expect_rank("fc_forward", w, 2)?;
    let (n_out, n_in) = (w.shape[0], w.shape[1]);
    if x.len() != n_in || b.len() != n_out {
        return Err(shape_err(
            "fc_forward",
            format!(
                "W {:?}, x {:?}, b {:?}",
                w.shape, x.shape, b.shape
            ),
        ));
    }
    let out = (0..n_out)
        .map(|o| dot(&w.data[o * n_in..(o + 1) * n_in], &x.data) + b.data[o])
        .collect();
    Ok(Tensor::vector(out))
}

/// Returns `(dx, dW, db)`.
pub fn fc_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n_out, n_in) = (w.shape[0], w.shape[1]);
    let mut gx = vec![0.0; n_in];
    let mut gw = vec![0.0; n_out * n_in];
    for o in 0..n_out {
        let g = grad_out.data[o];
        if g == 0.0 {
            continue;
        }
        axpy(g, &w.data[o * n_in..(o + 1) * n_in], &mut gx);
        axpy(g, &x.data, &mut gw[o * n_in..(o + 1) * n_in]);
    }
    (
        Tensor::vector(gx),
        Tensor {
            shape: w.shape.clone(),
            data: gw,
        },
        grad_out.clone(),
    )
}

// ---------------------------------------------------------------------------
// relu

/// NaN passes through so that divergence stays visible downstream.
pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect(),
    }
}

/// Derivative at exactly zero is taken as zero.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .zip(&grad_out.data)
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// convolution (cross-correlation, zero padded, stride 1)

struct ConvDims {
    h: usize,
    w: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
}

fn conv_dims(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<ConvDims> {
    expect_rank("conv2d_same", input, 3)?;
    expect_rank("conv2d_same", kernels, 4)?;
    let [h, w, c_in] = [input.shape[0], input.shape[1], input.shape[2]];
    let [k, k2, kc_in, c_out] = [
        kernels.shape[0],
        kernels.shape[1],
        kernels.shape[2],
        kernels.shape[3],
    ];
    if k != k2 || k % 2 == 0 {
        return Err(shape_err(
            "conv2d_same",
            format!("kernel must be square with odd side, got {:?}", kernels.shape),
        ));
    }
    if kc_in != c_in || bias.len() != c_out {
        return Err(shape_err(
            "conv2d_same",
            format!(
                "input {:?}, kernels {:?}, bias {:?}",
                input.shape, kernels.shape, bias.shape
            ),
        ));
    }
    Ok(ConvDims {
        h,
        w,
        c_in,
        c_out,
        k,
    })
}

/// Offsets `(dy, source_row)` of the kernel taps that land inside the image.
#[inline]
fn taps(pos: usize, k: usize, extent: usize) -> impl Iterator<Item = (usize, usize)> {
    let r = k / 2;
    (0..k).filter_map(move |d| {
        let src = pos as isize + d as isize - r as isize;
        (src >= 0 && (src as usize) < extent).then_some((d, src as usize))
    })
}

/// Input `[H, W, C_in]`, kernels `[k, k, C_in, C_out]`, bias `[C_out]`.
pub fn conv2d_same(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let ConvDims {
        h,
        w,
        c_in,
        c_out,
        k,
    } = conv_dims(input, kernels, bias)?;
    let mut out = vec![0.0; h * w * c_out];
    for y in 0..h {
        for x in 0..w {
            let o = &mut out[(y * w + x) * c_out..(y * w + x + 1) * c_out];
            o.copy_from_slice(&bias.data);
            for (dy, sy) in taps(y, k, h) {
                for (dx, sx) in taps(x, k, w) {
                    let px = &input.data[(sy * w + sx) * c_in..(sy * w + sx + 1) * c_in];
                    let kbase = (dy * k + dx) * c_in * c_out;
                    for (ci, &a) in px.iter().enumerate() {
                        let krow = &kernels.data[kbase + ci * c_out..kbase + (ci + 1) * c_out];
                        axpy(a, krow, o);
                    }
                }
            }
        }
    }
    Ok(Tensor {
        shape: vec![h, w, c_out],
        data: out,
    })
}

/// Returns `(d_input, d_kernels, d_bias)`.
pub fn conv2d_same_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let [h, w, c_in] = [input.shape[0], input.shape[1], input.shape[2]];
    let (k, c_out) = (kernels.shape[0], kernels.shape[3]);
    let mut gin = vec![0.0; input.len()];
    let mut gk = vec![0.0; kernels.len()];
    let mut gb = vec![0.0; c_out];
    for y in 0..h {
        for x in 0..w {
            let g = &grad_out.data[(y * w + x) * c_out..(y * w + x + 1) * c_out];
            axpy(1.0, g, &mut gb);
            for (dy, sy) in taps(y, k, h) {
                for (dx, sx) in taps(x, k, w) {
                    let pbase = (sy * w + sx) * c_in;
                    let kbase = (dy * k + dx) * c_in * c_out;
                    for ci in 0..c_in {
                        let krange = kbase + ci * c_out..kbase + (ci + 1) * c_out;
                        gin[pbase + ci] += dot(&kernels.data[krange.clone()], g);
                        axpy(input.data[pbase + ci], g, &mut gk[krange]);
                    }
                }
            }
        }
    }
    (
        Tensor {
            shape: input.shape.clone(),
            data: gin,
        },
        Tensor {
            shape: kernels.shape.clone(),
            data: gk,
        },
        Tensor::vector(gb),
    )
}

// ---------------------------------------------------------------------------
// 2x2 average pooling

pub fn avgpool2x2(input: &Tensor) -> Result<Tensor> {
    expect_rank("avgpool2x2", input, 3)?;
    let [h, w, c] = [input.shape[0], input.shape[1], input.shape[2]];
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err(
            "avgpool2x2",
            format!("spatial size must be even, got {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow * c];
    for y in 0..oh {
        for x in 0..ow {
            let o = &mut out[(y * ow + x) * c..(y * ow + x + 1) * c];
            for (sy, sx) in [(2 * y, 2 * x), (2 * y, 2 * x + 1), (2 * y + 1, 2 * x), (2 * y + 1, 2 * x + 1)] {
                axpy(1.0, &input.data[(sy * w + sx) * c..(sy * w + sx + 1) * c], o);
            }
            o.iter_mut().for_each(|v| *v *= 0.25);
        }
    }
    Ok(Tensor {
        shape: vec![oh, ow, c],
        data: out,
    })
}

pub fn avgpool2x2_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let [h, w, c] = [input_shape[0], input_shape[1], input_shape[2]];
    let ow = w / 2;
    let mut gin = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let g = &grad_out.data[((y / 2) * ow + x / 2) * c..((y / 2) * ow + x / 2 + 1) * c];
            axpy(0.25, g, &mut gin[(y * w + x) * c..(y * w + x + 1) * c]);
        }
    }
    Tensor {
        shape: input_shape.to_vec(),
        data: gin,
    }
}

// ---------------------------------------------------------------------------
// softmax

/// Softmax with max-subtraction.
pub fn softmax(logits: &Tensor) -> Tensor {
    let max = logits.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor {
        shape: logits.shape.clone(),
        data: exps.into_iter().map(|e| e / total).collect(),
    }
}

/// Pulls a gradient w.r.t. probabilities back to the logits:
/// `p ⊙ (g − ⟨g, p⟩)`.
pub fn softmax_backward(probs: &Tensor, grad_out: &Tensor) -> Tensor {
    let inner: f64 = probs.data.iter().zip(&grad_out.data).map(|(p, g)| p * g).sum();
    Tensor {
        shape: probs.shape.clone(),
        data: probs
            .data
            .iter()
            .zip(&grad_out.data)
            .map(|(&p, &g)| p * (g - inner))
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// structural ops

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(shape_err("add", format!("{:?} vs {:?}", a.shape, b.shape)));
    }
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
    })
}

/// Concatenates the flattened contents of `a` then `b`.
pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::vector(data)
}

pub fn flatten(t: &Tensor) -> Tensor {
    Tensor::vector(t.data.clone())
}

// ---------------------------------------------------------------------------
// gradient tape

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Fc { x: Var, w: Var, b: Var },
    Relu { x: Var },
    Conv { x: Var, k: Var, b: Var },
    Pool { x: Var },
    Add { a: Var, b: Var },
    Concat { a: Var, b: Var },
    Flatten { x: Var },
    Softmax { x: Var },
}

struct Node<'a> {
    op: OpKind,
    value: Cow<'a, Tensor>,
}

/// Single-use record of a forward pass.
///
/// Leaves may borrow (parameters) or own (inputs) their tensors. Every
/// other node stores its output, which doubles as the saved intermediate
/// for the backward kernels.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    consumed: bool,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    fn push(&mut self, op: OpKind, value: Cow<'a, Tensor>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Records a borrowed leaf, typically a parameter.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.push(OpKind::Leaf, Cow::Borrowed(t))
    }

    /// Records an owned leaf, typically an input.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(OpKind::Leaf, Cow::Owned(t))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> OpKind {
        self.nodes[v.0].op
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn fc(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = fc_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(OpKind::Fc { x, w, b }, Cow::Owned(out)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = relu(self.value(x));
        self.push(OpKind::Relu { x }, Cow::Owned(out))
    }

    pub fn conv2d_same(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let out = conv2d_same(self.value(x), self.value(k), self.value(b))?;
        Ok(self.push(OpKind::Conv { x, k, b }, Cow::Owned(out)))
    }

    pub fn avgpool2x2(&mut self, x: Var) -> Result<Var> {
        let out = avgpool2x2(self.value(x))?;
        Ok(self.push(OpKind::Pool { x }, Cow::Owned(out)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = add(self.value(a), self.value(b))?;
        Ok(self.push(OpKind::Add { a, b }, Cow::Owned(out)))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let out = concat(self.value(a), self.value(b));
        self.push(OpKind::Concat { a, b }, Cow::Owned(out))
    }

    pub fn flatten(&mut self, x: Var) -> Var {
        let out = flatten(self.value(x));
        self.push(OpKind::Flatten { x }, Cow::Owned(out))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax(self.value(x));
        self.push(OpKind::Softmax { x }, Cow::Owned(out))
    }

    /// Reverse-mode accumulation seeded at the last recorded node.
    ///
    /// The tape can be replayed only once.
    pub fn backward(&mut self, seed: &Tensor) -> Result<Gradients> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let last = self.nodes.len().checked_sub(1).ok_or(TensorError::EmptyTape)?;
        if seed.shape() != self.nodes[last].value.shape() {
            return Err(shape_err(
                "backward",
                format!(
                    "seed {:?} does not match output {:?}",
                    seed.shape(),
                    self.nodes[last].value.shape()
                ),
            ));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[last] = Some(seed.clone());
        let mut visited = Vec::new();
        for i in (0..self.nodes.len()).rev() {
            let op = self.nodes[i].op;
            if matches!(op, OpKind::Leaf) {
                continue;
            }
            visited.push(Var(i));
            let Some(g) = grads[i].take() else { continue };
            let val = |v: Var| -> &Tensor { &self.nodes[v.0].value };
            match op {
                OpKind::Leaf => unreachable!(),
                OpKind::Fc { x, w, b } => {
                    let (gx, gw, gb) = fc_backward(val(x), val(w), &g);
                    accumulate(&mut grads, x, gx);
                    accumulate(&mut grads, w, gw);
                    accumulate(&mut grads, b, gb);
                }
                OpKind::Relu { x } => {
                    let gx = relu_backward(val(x), &g);
                    accumulate(&mut grads, x, gx);
                }
                OpKind::Conv { x, k, b } => {
                    let (gx, gk, gb) = conv2d_same_backward(val(x), val(k), &g);
                    accumulate(&mut grads, x, gx);
                    accumulate(&mut grads, k, gk);
                    accumulate(&mut grads, b, gb);
                }
                OpKind::Pool { x } => {
                    let gx = avgpool2x2_backward(val(x).shape(), &g);
                    accumulate(&mut grads, x, gx);
                }
                OpKind::Add { a, b } => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g);
                }
                OpKind::Concat { a, b } => {
                    let split = val(a).len();
                    let mut data = g.into_data();
                    let tail = data.split_off(split);
                    let ga = Tensor {
                        shape: val(a).shape.clone(),
                        data,
                    };
                    let gb = Tensor {
                        shape: val(b).shape.clone(),
                        data: tail,
                    };
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                OpKind::Flatten { x } => {
                    let gx = Tensor {
                        shape: val(x).shape.clone(),
                        data: g.into_data(),
                    };
                    accumulate(&mut grads, x, gx);
                }
                OpKind::Softmax { x } => {
                    let gx = softmax_backward(&self.nodes[i].value, &g);
                    accumulate(&mut grads, x, gx);
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            grads,
            shapes,
            visited,
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => axpy(1.0, &g.data, &mut existing.data),
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Tape::backward`]: the gradient of every leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    visited: Vec<Var>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` was not on the path to the output.
    pub fn get(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    /// Non-leaf nodes in the order the backward pass processed them.
    pub fn visit_order(&self) -> &[Var] {
        &self.visited
    }
}


#[cfg(test)]
mod gradient_checks {
    use super::*;
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-5;
    const TOL: f64 = 1e-6;

    fn rng(seed: u64, tag: u64) -> ChaCha8Rng {
        stream(seed, Purpose::Eval, &[tag])
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Random values kept at least 0.05 away from the ReLU kink.
    fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let mut t = random(rng, shape);
        t.data_mut().iter_mut().for_each(|v| *v = v.signum() * (0.05 + v.abs()));
        t
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    /// Checks `analytic` against central differences of `<seed, f(inputs)>`
    /// in every coordinate of every input; returns the worst relative error.
    fn check(inputs: &[Tensor], seed_grad: &Tensor, f: impl Fn(&[Tensor]) -> Tensor, analytic: &[Tensor]) -> f64 {
        let mut worst = 0.0f64;
        let mut xs = inputs.to_vec();
        for (which, g) in analytic.iter().enumerate() {
            for i in 0..xs[which].len() {
                let orig = xs[which].data()[i];
                xs[which].data_mut()[i] = orig + H;
                let up = dot(seed_grad, &f(&xs));
                xs[which].data_mut()[i] = orig - H;
                let down = dot(seed_grad, &f(&xs));
                xs[which].data_mut()[i] = orig;
                worst = worst.max(rel(g.data()[i], (up - down) / (2.0 * H)));
            }
        }
        worst
    }

    #[test]
    fn fc_matches_finite_differences() {
        for seed in 0..5 {
            let r = &mut rng(seed, 1);
            let (x, w, b) = (random(r, &[4]), random(r, &[3, 4]), random(r, &[3]));
            let g = random(r, &[3]);
            let (dx, dw, db) = fc_backward(&x, &w, &g);
            let err = check(&[x, w, b], &g, |v| fc_forward(&v[0], &v[1], &v[2]).unwrap(), &[dx, dw, db]);
            assert!(err <= TOL, "seed {seed}: {err}");
        }
    }

    #[test]
    fn relu_matches_finite_differences() {
        for seed in 0..5 {
            let r = &mut rng(seed, 2);
            let x = away_from_zero(r, &[2, 3, 2]);
            let g = random(r, &[2, 3, 2]);
            let dx = relu_backward(&x, &g);
            let err = check(&[x], &g, |v| relu(&v[0]), &[dx]);
            assert!(err <= TOL, "seed {seed}: {err}");
        }
    }

    #[test]
    fn conv_matches_finite_differences() {
        for seed in 0..5 {
            for k in [1, 3] {
                let r = &mut rng(seed, 3 + k as u64);
                let (x, kern, b) = (random(r, &[4, 3, 2]), random(r, &[k, k, 2, 3]), random(r, &[3]));
                let g = random(r, &[4, 3, 3]);
                let (dx, dk, db) = conv2d_same_backward(&x, &kern, &g);
                let err = check(&[x, kern, b], &g, |v| conv2d_same(&v[0], &v[1], &v[2]).unwrap(), &[dx, dk, db]);
                assert!(err <= TOL, "seed {seed}, k {k}: {err}");
            }
        }
    }

    #[test]
    fn pool_matches_finite_differences() {
        for seed in 0..5 {
            let r = &mut rng(seed, 7);
            let x = random(r, &[4, 6, 2]);
            let g = random(r, &[2, 3, 2]);
            let dx = avgpool2x2_backward(x.shape(), &g);
            let err = check(&[x], &g, |v| avgpool2x2(&v[0]).unwrap(), &[dx]);
            assert!(err <= TOL, "seed {seed}: {err}");
        }
    }

    #[test]
    fn softmax_matches_finite_differences() {
        for seed in 0..5 {
            let r = &mut rng(seed, 8);
            let x = random(r, &[5]);
            let g = random(r, &[5]);
            let dx = softmax_backward(&softmax(&x), &g);
            let err = check(&[x], &g, |v| softmax(&v[0]), &[dx]);
            assert!(err <= TOL, "seed {seed}: {err}");
        }
    }

    #[test]
    fn composite_tape_matches_finite_differences() {
        // conv -> add skip -> relu -> pool -> flatten -> concat -> fc -> softmax
        for seed in 0..5 {
            let r = &mut rng(seed, 9);
            let params = [
                random(r, &[3, 3, 2, 2]),
                random(r, &[2]),
                random(r, &[3, 10]),
                random(r, &[3]),
            ];
            let patch = random(r, &[4, 4, 2]);
            let side = random(r, &[2]);
            let g = random(r, &[3]);
            let run = |p: &[Tensor]| -> Tensor {
                let mut tape = Tape::new();
                let v: Vec<Var> = p.iter().map(|t| tape.param(t)).collect();
                let x = tape.param(&patch);
                let s = tape.param(&side);
                let c = tape.conv2d_same(x, v[0], v[1]).unwrap();
                let a = tape.add(x, c).unwrap();
                let a = tape.relu(a);
                let pooled = tape.avgpool2x2(a).unwrap();
                let f = tape.flatten(pooled);
                let cat = tape.concat(s, f);
                let y = tape.fc(cat, v[2], v[3]).unwrap();
                let out = tape.softmax(y);
                tape.value(out).clone()
            };
            let analytic: Vec<Tensor> = {
                let mut tape = Tape::new();
                let v: Vec<Var> = params.iter().map(|t| tape.param(t)).collect();
                let x = tape.param(&patch);
                let s = tape.param(&side);
                let c = tape.conv2d_same(x, v[0], v[1]).unwrap();
                let a = tape.add(x, c).unwrap();
                let a = tape.relu(a);
                let pooled = tape.avgpool2x2(a).unwrap();
                let f = tape.flatten(pooled);
                let cat = tape.concat(s, f);
                let y = tape.fc(cat, v[2], v[3]).unwrap();
                tape.softmax(y);
                let grads = tape.backward(&g).unwrap();
                v.iter().map(|&p| grads.get(p)).collect()
            };
            let err = check(&params, &g, run, &analytic);
            assert!(err <= TOL, "seed {seed}: {err}");
        }
    }

    #[test]
    fn fc_matches_triple_loop() {
        let r = &mut rng(0, 10);
        let (x, w, b) = (random(r, &[3]), random(r, &[4, 3]), random(r, &[4]));
        let y = fc_forward(&x, &w, &b).unwrap();
        for i in 0..4 {
            let mut acc = b.data()[i];
            for j in 0..3 {
                acc += w.data()[i * 3 + j] * x.data()[j];
            }
            assert!((y.data()[i] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_matches_window_means() {
        let r = &mut rng(0, 11);
        let x = random(r, &[4, 4, 1]);
        let y = avgpool2x2(&x).unwrap();
        let at = |r: usize, c: usize| x.data()[r * 4 + c];
        for oy in 0..2 {
            for ox in 0..2 {
                let (r0, c0) = (2 * oy, 2 * ox);
                let mean = (at(r0, c0) + at(r0, c0 + 1) + at(r0 + 1, c0) + at(r0 + 1, c0 + 1)) / 4.0;
                assert!((y.data()[oy * 2 + ox] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_reference_values() {
        let p = softmax(&Tensor::vector(vec![1.0, 2.0, 3.0]));
        for (got, want) in p.data().iter().zip([0.090031, 0.244728, 0.665241]) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    // spreads beyond ~36 round the largest probability to exactly 1.0
    fn vec_strategy(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, len)
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(x in vec_strategy(2..12), shift in -50.0f64..50.0) {
            let p = softmax(&Tensor::vector(x.clone()));
            prop_assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
            let shifted = softmax(&Tensor::vector(x.iter().map(|v| v + shift).collect()));
            for (a, b) in p.data().iter().zip(shifted.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            prop_assert_eq!(p.argmax(), argmax(&x));
        }

        #[test]
        fn conv_is_linear(seed in 0u64..1000, alpha in -3.0f64..3.0) {
            let r = &mut rng(seed, 12);
            let (x, k) = (random(r, &[3, 4, 2]), random(r, &[3, 3, 2, 2]));
            let zero = Tensor::zeros(&[2]);
            let base = conv2d_same(&x, &k, &zero).unwrap();
            let mut xs = x.clone();
            xs.scale(alpha);
            let mut ks = k.clone();
            ks.scale(alpha);
            for out in [conv2d_same(&xs, &k, &zero).unwrap(), conv2d_same(&x, &ks, &zero).unwrap()] {
                for (a, b) in out.data().iter().zip(base.data()) {
                    prop_assert!((a - alpha * b).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn pool_preserves_mean(seed in 0u64..1000, h in 1usize..4, w in 1usize..4, c in 1usize..3) {
            let r = &mut rng(seed, 13);
            let x = random(r, &[2 * h, 2 * w, c]);
            let y = avgpool2x2(&x).unwrap();
            let mean = |t: &Tensor| t.data().iter().sum::<f64>() / t.len() as f64;
            prop_assert!((mean(&x) - mean(&y)).abs() < 1e-12);
        }

        #[test]
        fn finite_inputs_give_finite_outputs(seed in 0u64..1000) {
            let r = &mut rng(seed, 14);
            let x = random(r, &[4, 4, 2]);
            let y = conv2d_same(&x, &random(r, &[3, 3, 2, 3]), &random(r, &[3])).unwrap();
            let y = avgpool2x2(&relu(&y)).unwrap();
            let z = fc_forward(&flatten(&y), &random(r, &[2, 12]), &random(r, &[2])).unwrap();
            prop_assert!(softmax(&z).all_finite());
        }
    }
}
