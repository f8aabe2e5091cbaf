use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ChunkLayout, Conv1dDims};
use super::Tensor;
use crate::error::{Result, TseError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    pub(crate) tape: u64,
    pub(crate) index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Unary {
    Relu,
    Exp,
    Log,
    Sqrt,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    AddBias(Var, Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, normalized: Vec<f64>, inv_std: Vec<f64> },
    Sum(Var),
    SumAxis { x: Var, axis: usize },
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    Resize { x: Var, axis: usize },
    ExpandRows(Var),
    Conv1d { x: Var, w: Var, stride: usize, dilation: usize },
    ConvTranspose1d { x: Var, w: Var, stride: usize },
    Chunk { x: Var, layout: ChunkLayout },
    OverlapAdd { x: Var, layout: ChunkLayout },
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

/// Append-only record of executed operations.
///
/// A tape is single-threaded. Independent tapes may live on different threads.
pub struct Tape {
    id: u64,
    pub(crate) nodes: Vec<Node>,
    pub(crate) grads: Vec<Option<Tensor>>,
    pub(crate) backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node { value, requires_grad, op });
        Var { tape: self.id, index }
    }

    pub(crate) fn node(&self, v: Var) -> Result<&Node> {
        if v.tape != self.id {
            return Err(TseError::Graph(format!(
                "variable #{} belongs to tape {} but was used on tape {}",
                v.index, v.tape, self.id
            )));
        }
        self.nodes
            .get(v.index)
            .ok_or_else(|| TseError::Graph(format!("variable #{} not on tape", v.index)))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.index].requires_grad)
    }

    /// Input leaf that receives a gradient on backward.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Input leaf that is treated as constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.node(v)?.value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.node(v)?.value.shape())
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        Ok(self.node(v)?.requires_grad)
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Result<Option<&Tensor>> {
        self.node(v)?;
        Ok(self.grads.get(v.index).and_then(|g| g.as_ref()))
    }

    /// Clears gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    // ---- elementwise -------------------------------------------------------

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        let out_shape = if av.shape() == bv.shape() || bv.len() == 1 {
            av.shape().to_vec()
        } else if av.len() == 1 {
            bv.shape().to_vec()
        } else {
            return Err(TseError::shape(
                name,
                format!("operand shapes {:?} and {:?} differ and neither is a scalar", av.shape(), bv.shape()),
            ));
        };
        let n: usize = out_shape.iter().product();
        let (ad, bd) = (av.data(), bv.data());
        let ai = |i: usize| if ad.len() == 1 { ad[0] } else { ad[i] };
        let bi = |i: usize| if bd.len() == 1 { bd[0] } else { bd[i] };
        if kind == Binary::Div && bd.contains(&0.0) {
            return Err(TseError::domain("div", "division by zero"));
        }
        let data: Vec<f64> = (0..n)
            .map(|i| match kind {
                Binary::Add => ai(i) + bi(i),
                Binary::Sub => ai(i) - bi(i),
                Binary::Mul => ai(i) * bi(i),
                Binary::Div => ai(i) / bi(i),
            })
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(out_shape, data), rg, Op::Binary(kind, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let xv = &self.node(x)?.value;
        match kind {
            Unary::Log if xv.data().iter().any(|&v| v <= 0.0) => {
                return Err(TseError::domain("log", "non-positive input"));
            }
            Unary::Sqrt if xv.data().iter().any(|&v| v <= 0.0) => {
                return Err(TseError::domain("sqrt", "non-positive input"));
            }
            _ => {}
        }
        let out = xv.map(|v| match kind {
            Unary::Relu => {
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
            Unary::Exp => v.exp(),
            Unary::Log => v.ln(),
            Unary::Sqrt => v.sqrt(),
            Unary::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Unary::Tanh => v.tanh(),
        });
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::Unary(kind, x)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sqrt, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.node(x)?.value.map(|v| v * factor);
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::Scale(x, factor)))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.node(x)?.value.map(|v| v + c);
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::AddScalar(x)))
    }

    // ---- linear algebra ----------------------------------------------------

    /// `[m×k] · [k×n] → [m×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TseError::shape("matmul", format!("cannot multiply {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut c = vec![0.0; m * n];
        kernels::matmul_acc(av.data(), bv.data(), &mut c, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], c), rg, Op::MatMul(a, b)))
    }

    /// `[B×m×k] · [B×k×n] → [B×m×n]`
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(TseError::shape("bmm", format!("cannot batch-multiply {sa:?} by {sb:?}")));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut c = vec![0.0; bs * m * n];
        for i in 0..bs {
            kernels::matmul_acc(
                &av.data()[i * m * k..(i + 1) * m * k],
                &bv.data()[i * k * n..(i + 1) * k * n],
                &mut c[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![bs, m, n], c), rg, Op::BatchMatMul(a, b)))
    }

    /// Adds `bias[n]` to every length-`n` row of `x[..., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (&self.node(x)?.value, &self.node(bias)?.value);
        let n = *xv.shape().last().unwrap_or(&1);
        if bv.shape() != [n] {
            return Err(TseError::shape(
                "add_bias",
                format!("bias {:?} does not match last axis of {:?}", bv.shape(), xv.shape()),
            ));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, rg, Op::AddBias(x, bias)))
    }

    /// `x[N×in] · w[in×out] + b[out]`
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    // ---- normalization -----------------------------------------------------

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = &self.node(x)?.value;
        if axis >= xv.ndim() {
            return Err(TseError::shape("softmax", format!("axis {axis} out of range for {:?}", xv.shape())));
        }
        let (outer, n, inner) = kernels::axis_split(xv.shape(), axis);
        let src = xv.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for j in 0..n {
                    mx = mx.max(src[at(j)]);
                }
                let mut z = 0.0;
                for j in 0..n {
                    let e = (src[at(j)] - mx).exp();
                    out[at(j)] = e;
                    z += e;
                }
                for j in 0..n {
                    out[at(j)] /= z;
                }
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), rg, Op::Softmax { x, axis }))
    }

    /// Normalizes every last-axis row to zero mean and unit variance, then
    /// applies `gain` and `bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (&self.node(x)?.value, &self.node(gain)?.value, &self.node(bias)?.value);
        let d = *xv.shape().last().unwrap_or(&1);
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(TseError::shape(
                "layernorm",
                format!("gain {:?} / bias {:?} must both be [{d}]", gv.shape(), bv.shape()),
            ));
        }
        let rows = xv.len() / d;
        let mut normalized = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let xh = (row[j] - mean) * inv;
                normalized[r * d + j] = xh;
                out[r * d + j] = gv.data()[j] * xh + bv.data()[j];
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            rg,
            Op::LayerNorm { x, gain, bias, normalized, inv_std },
        ))
    }

    // ---- reductions and layout ---------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.node(x)?.value.sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), rg, Op::Sum(x)))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.node(x)?.value.len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Sums over `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = &self.node(x)?.value;
        if axis >= xv.ndim() {
            return Err(TseError::shape("sum_axis", format!("axis {axis} out of range for {:?}", xv.shape())));
        }
        let (outer, n, inner) = kernels::axis_split(xv.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let src = &xv.data()[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (dst, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += v;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), rg, Op::SumAxis { x, axis }))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = *self
            .node(x)?
            .value
            .shape()
            .get(axis)
            .ok_or_else(|| TseError::shape("mean_axis", format!("axis {axis} out of range")))?;
        let s = self.sum_axis(x, axis)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let n: usize = shape.iter().product();
        if n != xv.len() || shape.contains(&0) {
            return Err(TseError::shape("reshape", format!("cannot view {:?} as {shape:?}", xv.shape())));
        }
        let out = Tensor::from_parts(shape.to_vec(), xv.data().to_vec());
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::Reshape(x)))
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let mut seen = vec![false; xv.ndim()];
        if perm.len() != xv.ndim() || perm.iter().any(|&p| p >= seen.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(TseError::shape("permute", format!("{perm:?} is not a permutation of {:?}", xv.shape())));
        }
        let (shape, data) = kernels::permute(xv.data(), xv.shape(), perm);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, data), rg, Op::Permute { x, perm: perm.to_vec() }))
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.permute(x, &[1, 0])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .node(*inputs.first().ok_or_else(|| TseError::shape("concat", "no inputs"))?)?
            .value
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(TseError::shape("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.node(v)?.value.shape();
            let compatible = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TseError::shape("concat", format!("{s:?} incompatible with {first:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = &self.nodes[v.index].value;
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = self.rg(inputs);
        Ok(self.push(Tensor::from_parts(shape, out), rg, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    /// Truncates or zero-pads `axis` (at its end) to `len`.
    pub fn resize_axis(&mut self, x: Var, axis: usize, len: usize) -> Result<Var> {
        let xv = &self.node(x)?.value;
        if axis >= xv.ndim() || len == 0 {
            return Err(TseError::shape("resize_axis", format!("cannot resize axis {axis} of {:?} to {len}", xv.shape())));
        }
        let (outer, n, inner) = kernels::axis_split(xv.shape(), axis);
        let keep = n.min(len);
        let mut out = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src = &xv.data()[o * n * inner..o * n * inner + keep * inner];
            out[o * len * inner..o * len * inner + keep * inner].copy_from_slice(src);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), rg, Op::Resize { x, axis }))
    }

    /// Stacks `rows` copies of `x` along a new leading axis.
    pub fn expand_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let xv = &self.node(x)?.value;
        if rows == 0 {
            return Err(TseError::shape("expand_rows", "zero rows"));
        }
        let mut data = Vec::with_capacity(rows * xv.len());
        for _ in 0..rows {
            data.extend_from_slice(xv.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(xv.shape());
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, data), rg, Op::ExpandRows(x)))
    }

    // ---- convolutions ------------------------------------------------------

    /// `x[C_in×L] ⊛ w[C_out×C_in×k] → [C_out×L']`, no padding,
    /// `L' = ⌊(L − dilation·(k−1) − 1)/stride⌋ + 1`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, dilation: usize) -> Result<Var> {
        let (xv, wv) = (&self.node(x)?.value, &self.node(w)?.value);
        let dims = conv_dims(xv.shape(), wv.shape(), stride, dilation)?;
        let y = kernels::conv1d_forward(xv.data(), wv.data(), &dims);
        let rg = self.rg(&[x, w]);
        Ok(self.push(
            Tensor::from_parts(vec![dims.c_out, dims.len_out], y),
            rg,
            Op::Conv1d { x, w, stride, dilation },
        ))
    }

    /// Transposed convolution `x[C_in×L'] → [C_out×L]` with kernels
    /// `w[C_in×C_out×k]`, `L = (L'−1)·stride + k`. For a fixed kernel tensor this
    /// is the adjoint of [`conv1d`](Self::conv1d).
    pub fn conv1d_transpose(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let (xv, wv) = (&self.node(x)?.value, &self.node(w)?.value);
        let (sx, sw) = (xv.shape(), wv.shape());
        if sx.len() != 2 || sw.len() != 3 || sx[0] != sw[0] || stride == 0 {
            return Err(TseError::shape(
                "conv1d_transpose",
                format!("input {sx:?} incompatible with kernels {sw:?} (stride {stride})"),
            ));
        }
        let (c_in, len_in, c_out, k) = (sx[0], sx[1], sw[1], sw[2]);
        let y = kernels::conv1d_transpose_forward(xv.data(), wv.data(), c_in, c_out, k, len_in, stride);
        let len_out = (len_in - 1) * stride + k;
        let rg = self.rg(&[x, w]);
        Ok(self.push(
            Tensor::from_parts(vec![c_out, len_out], y),
            rg,
            Op::ConvTranspose1d { x, w, stride },
        ))
    }

    // ---- dual-path layout --------------------------------------------------

    /// `[T×D] → [S×K×D]` per `layout`.
    pub fn chunk(&mut self, x: Var, layout: ChunkLayout) -> Result<Var> {
        layout.validate()?;
        let xv = &self.node(x)?.value;
        if xv.ndim() != 2 || xv.shape()[0] != layout.frames {
            return Err(TseError::shape("chunk", format!("input {:?} does not match {} frames", xv.shape(), layout.frames)));
        }
        let d = xv.shape()[1];
        let out = layout.chunk(xv.data(), d);
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::from_parts(vec![layout.chunks, layout.chunk_len, d], out),
            rg,
            Op::Chunk { x, layout },
        ))
    }

    /// `[S×K×D] → [T×D]`, inverse of [`chunk`](Self::chunk).
    pub fn overlap_add(&mut self, x: Var, layout: ChunkLayout) -> Result<Var> {
        layout.validate()?;
        let xv = &self.node(x)?.value;
        if xv.ndim() != 3 || xv.shape()[0] != layout.chunks || xv.shape()[1] != layout.chunk_len {
            return Err(TseError::shape(
                "overlap_add",
                format!("input {:?} does not match layout [{}×{}×D]", xv.shape(), layout.chunks, layout.chunk_len),
            ));
        }
        let d = xv.shape()[2];
        let out = layout.overlap_add(xv.data(), d);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(vec![layout.frames, d], out), rg, Op::OverlapAdd { x, layout }))
    }

    // ---- losses ------------------------------------------------------------

    /// `−log softmax(logits)[target]` for a single logit vector.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let lv = &self.node(logits)?.value;
        let n = lv.len();
        if target >= n {
            return Err(TseError::shape("cross_entropy", format!("target {target} out of range for {n} classes")));
        }
        let mx = lv.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = lv.data().iter().map(|v| (v - mx).exp()).sum();
        let lse = mx + z.ln();
        let probs: Vec<f64> = lv.data().iter().map(|v| (v - lse).exp()).collect();
        let loss = lse - lv.data()[target];
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::scalar(loss), rg, Op::CrossEntropy { logits, target, probs }))
    }
}

pub(crate) fn conv_dims(sx: &[usize], sw: &[usize], stride: usize, dilation: usize) -> Result<Conv1dDims> {
    if sx.len() != 2 || sw.len() != 3 || sx[0] != sw[1] || stride == 0 || dilation == 0 {
        return Err(TseError::shape(
            "conv1d",
            format!("input {sx:?} incompatible with kernels {sw:?} (stride {stride}, dilation {dilation})"),
        ));
    }
    let (c_in, len_in, c_out, kernel) = (sx[0], sx[1], sw[0], sw[2]);
    let len_out = kernels::conv1d_out_len(len_in, kernel, stride, dilation).ok_or(TseError::TooShort {
        op: "conv1d",
        needed: dilation * (kernel - 1) + 1,
        got: len_in,
    })?;
    Ok(Conv1dDims { c_in, c_out, kernel, len_in, len_out, stride, dilation })
}
