//! Tape-based reverse-mode automatic differentiation.
//!
//! Every primitive call evaluates eagerly and appends one node to the tape,
//! so node order is a topological order by construction. [`Graph::replay`]
//! re-evaluates the tape from its leaves and [`Graph::backward`] walks it in
//! reverse.

use super::kernels::{col2im3x3, gemm, im2col3x3, sigmoid, softmax_rows};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Fixed epsilon inside group normalization.
pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    AddChannelBias(Var, Var),
    Conv3x3 { x: Var, w: Var, b: Var },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize },
    Silu(Var),
    Softmax(Var),
    Transpose(Var),
    Reshape(Var, Vec<usize>),
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize, len: usize },
    AvgPool2(Var),
    Upsample2(Var),
    Sum(Var),
    Mean(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::AddRowBias(a, b) | Op::AddChannelBias(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::AddScalar(a, _) => vec![*a],
            Op::Conv3x3 { x, w, b } => vec![*x, *w, *b],
            Op::GroupNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Silu(a) | Op::Softmax(a) | Op::Transpose(a) | Op::Reshape(a, _) => vec![*a],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Narrow { x, .. } => vec![*x],
            Op::AvgPool2(a) | Op::Upsample2(a) | Op::Sum(a) | Op::Mean(a) => vec![*a],
        }
    }
}

/// Intermediate values a primitive keeps for its backward rule.
#[derive(Clone, Debug)]
enum Aux {
    None,
    Cols(Vec<f64>),
    Norm { xhat: Vec<f64>, rstd: Vec<f64> },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    aux: Aux,
    needs_grad: bool,
}

/// An ordered record of primitive operations.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::dim(format!("{what} expects a 2-D tensor, got {s:?}"))),
    }
}

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(Error::dim(format!("{what} expects a C×H×W tensor, got {s:?}"))),
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable leaf (a parameter or an input we want gradients for).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, Aux::None, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, Aux::None, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Replaces a leaf's value; call [`Graph::replay`] to propagate.
    pub fn set_leaf(&mut self, v: Var, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::arg("set_leaf on a non-leaf node"));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::dim(format!("set_leaf shape {:?} vs {:?}", value.shape(), node.value.shape())));
        }
        node.value = value;
        Ok(())
    }

    /// Re-evaluates every recorded operation, in order, from current leaf values.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let (value, aux) = self.eval(&op)?;
            self.nodes[i].value = value;
            self.nodes[i].aux = aux;
        }
        self.grads.clear();
        Ok(())
    }

    fn push(&mut self, value: Tensor, op: Op, aux: Aux, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, aux, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let (value, aux) = self.eval(&op)?;
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(value, op, aux, needs_grad))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.record(Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.record(Op::AddScalar(a, s))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }

    /// `x[m×n] + b[n]` on every row.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.record(Op::AddRowBias(x, b))
    }

    /// `x[C×…] + b[C]` on every channel.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.record(Op::AddChannelBias(x, b))
    }

    /// 3×3 convolution, stride 1, zero padding 1.
    pub fn conv2d_3x3(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.record(Op::Conv3x3 { x, w, b })
    }

    /// Group normalization over `x[C×…]` with per-channel affine.
    pub fn group_norm(&mut self, x: Var, groups: usize, gamma: Var, beta: Var) -> Result<Var> {
        self.record(Op::GroupNorm { x, gamma, beta, groups })
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Silu(x))
    }

    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Softmax(x))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Transpose(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.record(Op::Reshape(x, shape.to_vec()))
    }

    /// Concatenates 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.record(Op::Concat { parts: parts.to_vec(), axis })
    }

    /// `len` rows (axis 0) or columns (axis 1) of a 2-D tensor starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.record(Op::Narrow { x, axis, start, len })
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        self.record(Op::AvgPool2(x))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Upsample2(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Mean(x))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let t = self.constant(target.clone());
        let d = self.sub(pred, t)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    fn eval(&self, op: &Op) -> Result<(Tensor, Aux)> {
        let v = |x: &Var| &self.nodes[x.0].value;
        let out = match op {
            Op::Leaf => unreachable!("leaves are never evaluated"),
            Op::Add(a, b) => v(a).add(v(b))?,
            Op::Sub(a, b) => v(a).sub(v(b))?,
            Op::Mul(a, b) => v(a).zip_map(v(b), |x, y| x * y)?,
            Op::Scale(a, s) => v(a).scale(*s),
            Op::AddScalar(a, s) => v(a).map(|x| x + s),
            Op::MatMul(a, b) => {
                let (m, k) = dims2(v(a), "matmul")?;
                let (k2, n) = dims2(v(b), "matmul")?;
                if k != k2 {
                    return Err(Error::dim(format!("matmul inner dims {k} vs {k2}")));
                }
                let mut out = vec![0.0; m * n];
                gemm(m, k, n, v(a).data(), false, v(b).data(), false, &mut out, false);
                Tensor::from_parts(vec![m, n], out)
            }
            Op::AddRowBias(x, b) => {
                let (_, n) = dims2(v(x), "add_row_bias")?;
                if v(b).shape() != [n] {
                    return Err(Error::dim(format!("row bias {:?} for {} columns", v(b).shape(), n)));
                }
                let mut out = v(x).clone();
                let bias = v(b).data();
                out.data_mut().chunks_mut(n).for_each(|row| add_into_slice(row, bias));
                out
            }
            Op::AddChannelBias(x, b) => {
                let shape = v(x).shape();
                if shape.is_empty() || v(b).shape() != [shape[0]] {
                    return Err(Error::dim(format!("channel bias {:?} for input {:?}", v(b).shape(), shape)));
                }
                let per = v(x).numel() / shape[0];
                let mut out = v(x).clone();
                for (chunk, &bias) in out.data_mut().chunks_mut(per).zip(v(b).data()) {
                    chunk.iter_mut().for_each(|e| *e += bias);
                }
                out
            }
            Op::Conv3x3 { x, w, b } => {
                let (c, h, wd) = dims3(v(x), "conv2d_3x3")?;
                if h < 3 || wd < 3 {
                    return Err(Error::dim(format!("conv2d_3x3 needs H,W >= 3, got {h}x{wd}")));
                }
                let ws = v(w).shape();
                if ws.len() != 4 || ws[1] != c || ws[2] != 3 || ws[3] != 3 {
                    return Err(Error::dim(format!("conv weight {ws:?} for {c}-channel input")));
                }
                let o = ws[0];
                if v(b).shape() != [o] {
                    return Err(Error::dim(format!("conv bias {:?} for {o} outputs", v(b).shape())));
                }
                let hw = h * wd;
                let cols = im2col3x3(v(x).data(), c, h, wd);
                let mut out = vec![0.0; o * hw];
                gemm(o, c * 9, hw, v(w).data(), false, &cols, false, &mut out, false);
                for (chunk, &bias) in out.chunks_mut(hw).zip(v(b).data()) {
                    chunk.iter_mut().for_each(|e| *e += bias);
                }
                return Ok((Tensor::from_parts(vec![o, h, wd], out), Aux::Cols(cols)));
            }
            Op::GroupNorm { x, gamma, beta, groups } => {
                return group_norm_forward(v(x), v(gamma), v(beta), *groups);
            }
            Op::Silu(a) => v(a).map(|x| x * sigmoid(x)),
            Op::Softmax(a) => {
                let shape = v(a).shape();
                let cols = *shape.last().ok_or_else(|| Error::dim("softmax of a scalar"))?;
                Tensor::from_parts(shape.to_vec(), softmax_rows(v(a).data(), cols))
            }
            Op::Transpose(a) => v(a).transpose2()?,
            Op::Reshape(a, shape) => v(a).reshape(shape)?,
            Op::Concat { parts, axis } => concat_forward(parts.iter().map(v).collect(), *axis)?,
            Op::Narrow { x, axis, start, len } => narrow_forward(v(x), *axis, *start, *len)?,
            Op::AvgPool2(a) => {
                let (c, h, w) = dims3(v(a), "avg_pool2")?;
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::dim(format!("avg_pool2 needs even H,W, got {h}x{w}")));
                }
                let (ho, wo) = (h / 2, w / 2);
                let src = v(a).data();
                let mut out = vec![0.0; c * ho * wo];
                for ch in 0..c {
                    for y in 0..ho {
                        for x in 0..wo {
                            let base = ch * h * w + 2 * y * w + 2 * x;
                            out[ch * ho * wo + y * wo + x] =
                                0.25 * (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]);
                        }
                    }
                }
                Tensor::from_parts(vec![c, ho, wo], out)
            }
            Op::Upsample2(a) => {
                let (c, h, w) = dims3(v(a), "upsample2")?;
                let (ho, wo) = (2 * h, 2 * w);
                let src = v(a).data();
                let mut out = vec![0.0; c * ho * wo];
                for ch in 0..c {
                    for y in 0..ho {
                        for x in 0..wo {
                            out[ch * ho * wo + y * wo + x] = src[ch * h * w + (y / 2) * w + x / 2];
                        }
                    }
                }
                Tensor::from_parts(vec![c, ho, wo], out)
            }
            Op::Sum(a) => Tensor::scalar(v(a).sum()),
            Op::Mean(a) => Tensor::scalar(v(a).mean()),
        };
        Ok((out, Aux::None))
    }

    /// Reverse pass from a one-element `loss`.
    ///
    /// Afterwards [`Graph::grad`] returns `∂loss/∂v` for every node; nodes with
    /// no path to the loss get exact zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.backward_node(i, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v` (zeros when unreachable).
    pub fn grad(&self, v: Var) -> Tensor {
        let shape = self.nodes[v.0].value.shape().to_vec();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        }
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |x: &Var| &self.nodes[x.0].value;
        let needs = |x: &Var| self.nodes[x.0].needs_grad;
        let mut acc = |x: Var, contrib: &[f64]| {
            let slot = &mut grads[x.0];
            match slot {
                Some(existing) => add_into(existing, contrib),
                None => *slot = Some(contrib.to_vec()),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(a) {
                    acc(*a, g);
                }
                if needs(b) {
                    acc(*b, g);
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    acc(*a, g);
                }
                if needs(b) {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    acc(*b, &neg);
                }
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    let c: Vec<f64> = g.iter().zip(val(b).data()).map(|(g, y)| g * y).collect();
                    acc(*a, &c);
                }
                if needs(b) {
                    let c: Vec<f64> = g.iter().zip(val(a).data()).map(|(g, x)| g * x).collect();
                    acc(*b, &c);
                }
            }
            Op::Scale(a, s) => {
                let c: Vec<f64> = g.iter().map(|g| g * s).collect();
                acc(*a, &c);
            }
            Op::AddScalar(a, _) | Op::Reshape(a, _) => acc(*a, g),
            Op::MatMul(a, b) => {
                let (m, k) = dims2(val(a), "matmul")?;
                let (_, n) = dims2(val(b), "matmul")?;
                if needs(a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, val(b).data(), true, &mut ga, false);
                    acc(*a, &ga);
                }
                if needs(b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, val(a).data(), true, g, false, &mut gb, false);
                    acc(*b, &gb);
                }
            }
            Op::AddRowBias(x, b) => {
                if needs(x) {
                    acc(*x, g);
                }
                if needs(b) {
                    let n = val(b).numel();
                    let mut gb = vec![0.0; n];
                    g.chunks(n).for_each(|row| add_into_slice(&mut gb, row));
                    acc(*b, &gb);
                }
            }
            Op::AddChannelBias(x, b) => {
                if needs(x) {
                    acc(*x, g);
                }
                if needs(b) {
                    let per = g.len() / val(b).numel();
                    let gb: Vec<f64> = g.chunks(per).map(|c| c.iter().sum()).collect();
                    acc(*b, &gb);
                }
            }
            Op::Conv3x3 { x, w, b } => {
                let Aux::Cols(cols) = &node.aux else {
                    return Err(Error::arg("conv node lost its im2col buffer"));
                };
                let (c, h, wd) = dims3(val(x), "conv2d_3x3")?;
                let o = val(w).shape()[0];
                let hw = h * wd;
                if needs(w) {
                    let mut gw = vec![0.0; o * c * 9];
                    gemm(o, hw, c * 9, g, false, cols, true, &mut gw, false);
                    acc(*w, &gw);
                }
                if needs(x) {
                    let mut gcols = vec![0.0; c * 9 * hw];
                    gemm(c * 9, o, hw, val(w).data(), true, g, false, &mut gcols, false);
                    acc(*x, &col2im3x3(&gcols, c, h, wd));
                }
                if needs(b) {
                    let gb: Vec<f64> = g.chunks(hw).map(|c| c.iter().sum()).collect();
                    acc(*b, &gb);
                }
            }
            Op::GroupNorm { x, gamma, beta, groups } => {
                let Aux::Norm { xhat, rstd } = &node.aux else {
                    return Err(Error::arg("group norm node lost its statistics"));
                };
                let channels = val(gamma).numel();
                let per_channel = g.len() / channels;
                let per_group = channels / groups * per_channel;
                if needs(gamma) {
                    let gg: Vec<f64> = g
                        .chunks(per_channel)
                        .zip(xhat.chunks(per_channel))
                        .map(|(gc, xc)| gc.iter().zip(xc).map(|(a, b)| a * b).sum())
                        .collect();
                    acc(*gamma, &gg);
                }
                if needs(beta) {
                    let gb: Vec<f64> = g.chunks(per_channel).map(|c| c.iter().sum()).collect();
                    acc(*beta, &gb);
                }
                if needs(x) {
                    let gam = val(gamma).data();
                    // dxhat = dy * gamma[c]
                    let dxhat: Vec<f64> = g.iter().enumerate().map(|(idx, gv)| gv * gam[idx / per_channel]).collect();
                    let mut gx = vec![0.0; g.len()];
                    for grp in 0..*groups {
                        let range = grp * per_group..(grp + 1) * per_group;
                        let dxh = &dxhat[range.clone()];
                        let xh = &xhat[range.clone()];
                        let n = per_group as f64;
                        let mean_d = dxh.iter().sum::<f64>() / n;
                        let mean_dx = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((dst, &d), &xv) in gx[range].iter_mut().zip(dxh).zip(xh) {
                            *dst = rstd[grp] * (d - mean_d - xv * mean_dx);
                        }
                    }
                    acc(*x, &gx);
                }
            }
            Op::Silu(a) => {
                let c: Vec<f64> = g
                    .iter()
                    .zip(val(a).data())
                    .map(|(g, &x)| {
                        let s = sigmoid(x);
                        g * s * (1.0 + x * (1.0 - s))
                    })
                    .collect();
                acc(*a, &c);
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let cols = *node.value.shape().last().unwrap_or(&1);
                let mut c = vec![0.0; g.len()];
                for ((gr, yr), cr) in g.chunks(cols).zip(y.chunks(cols)).zip(c.chunks_mut(cols)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((dst, &gv), &yv) in cr.iter_mut().zip(gr).zip(yr) {
                        *dst = yv * (gv - dot);
                    }
                }
                acc(*a, &c);
            }
            Op::Transpose(a) => {
                let (r, c) = dims2(&node.value, "transpose")?;
                let gt = Tensor::from_parts(vec![r, c], g.to_vec()).transpose2()?;
                acc(*a, gt.data());
            }
            Op::Concat { parts, axis } => {
                let (rows, cols) = dims2(&node.value, "concat")?;
                let mut offset = 0;
                for p in parts {
                    let (pr, pc) = dims2(val(p), "concat")?;
                    if needs(p) {
                        let piece = if *axis == 0 {
                            g[offset * cols..(offset + pr) * cols].to_vec()
                        } else {
                            let mut piece = Vec::with_capacity(pr * pc);
                            for r in 0..rows {
                                piece.extend_from_slice(&g[r * cols + offset..r * cols + offset + pc]);
                            }
                            piece
                        };
                        acc(*p, &piece);
                    }
                    offset += if *axis == 0 { pr } else { pc };
                }
            }
            Op::Narrow { x, axis, start, len } => {
                let (r, c) = dims2(val(x), "narrow")?;
                let mut gx = vec![0.0; r * c];
                if *axis == 0 {
                    gx[start * c..(start + len) * c].copy_from_slice(g);
                } else {
                    for row in 0..r {
                        gx[row * c + start..row * c + start + len].copy_from_slice(&g[row * len..(row + 1) * len]);
                    }
                }
                acc(*x, &gx);
            }
            Op::AvgPool2(a) => {
                let (c, h, w) = dims3(val(a), "avg_pool2")?;
                let (ho, wo) = (h / 2, w / 2);
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            gx[ch * h * w + y * w + x] = 0.25 * g[ch * ho * wo + (y / 2) * wo + x / 2];
                        }
                    }
                }
                acc(*a, &gx);
            }
            Op::Upsample2(a) => {
                let (c, h, w) = dims3(val(a), "upsample2")?;
                let (ho, wo) = (2 * h, 2 * w);
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..ho {
                        for x in 0..wo {
                            gx[ch * h * w + (y / 2) * w + x / 2] += g[ch * ho * wo + y * wo + x];
                        }
                    }
                }
                acc(*a, &gx);
            }
            Op::Sum(a) => {
                let n = val(a).numel();
                acc(*a, &vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = val(a).numel();
                acc(*a, &vec![g[0] / n as f64; n]);
            }
        }
        Ok(())
    }
}

fn add_into_slice(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn group_norm_forward(x: &Tensor, gamma: &Tensor, beta: &Tensor, groups: usize) -> Result<(Tensor, Aux)> {
    let shape = x.shape();
    if shape.is_empty() {
        return Err(Error::dim("group_norm of a scalar"));
    }
    let channels = shape[0];
    if groups == 0 || !channels.is_multiple_of(groups) {
        return Err(Error::dim(format!("group_norm: {channels} channels not divisible into {groups} groups")));
    }
    if gamma.shape() != [channels] || beta.shape() != [channels] {
        return Err(Error::dim(format!(
            "group_norm affine {:?}/{:?} for {channels} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    let per_channel = x.numel() / channels;
    let per_group = channels / groups * per_channel;
    let data = x.data();
    let mut xhat = vec![0.0; data.len()];
    let mut rstd = vec![0.0; groups];
    for grp in 0..groups {
        let range = grp * per_group..(grp + 1) * per_group;
        let chunk = &data[range.clone()];
        let n = per_group as f64;
        let mean = chunk.iter().sum::<f64>() / n;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let r = 1.0 / (var + GROUP_NORM_EPS).sqrt();
        rstd[grp] = r;
        for (dst, &v) in xhat[range].iter_mut().zip(chunk) {
            *dst = (v - mean) * r;
        }
    }
    let (gam, bet) = (gamma.data(), beta.data());
    let out: Vec<f64> = xhat
        .iter()
        .enumerate()
        .map(|(idx, &xh)| {
            let c = idx / per_channel;
            xh * gam[c] + bet[c]
        })
        .collect();
    Ok((Tensor::from_parts(shape.to_vec(), out), Aux::Norm { xhat, rstd }))
}

fn concat_forward(parts: Vec<&Tensor>, axis: usize) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::dim("concat of zero tensors"));
    }
    let dims: Vec<(usize, usize)> = parts.iter().map(|p| dims2(p, "concat")).collect::<Result<_>>()?;
    match axis {
        0 => {
            let cols = dims[0].1;
            if dims.iter().any(|d| d.1 != cols) {
                return Err(Error::dim(format!("concat rows with column counts {dims:?}")));
            }
            let rows = dims.iter().map(|d| d.0).sum();
            let data = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
            Ok(Tensor::from_parts(vec![rows, cols], data))
        }
        1 => {
            let rows = dims[0].0;
            if dims.iter().any(|d| d.0 != rows) {
                return Err(Error::dim(format!("concat columns with row counts {dims:?}")));
            }
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in &parts {
                    data.extend_from_slice(p.row(r));
                }
            }
            Ok(Tensor::from_parts(vec![rows, cols], data))
        }
        _ => Err(Error::dim(format!("concat axis {axis} on 2-D tensors"))),
    }
}

fn narrow_forward(x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
    let (r, c) = dims2(x, "narrow")?;
    let extent = if axis == 0 { r } else { c };
    if axis > 1 || len == 0 || start + len > extent {
        return Err(Error::dim(format!("narrow axis {axis} [{start}, {}) of shape {:?}", start + len, x.shape())));
    }
    if axis == 0 {
        Ok(Tensor::from_parts(vec![len, c], x.data()[start * c..(start + len) * c].to_vec()))
    } else {
        let mut data = Vec::with_capacity(r * len);
        for row in 0..r {
            data.extend_from_slice(&x.row(row)[start..start + len]);
        }
        Ok(Tensor::from_parts(vec![r, len], data))
    }
}
