use super::kernels;
use super::tape::{conv_dims, Binary, Op, Tape, Unary, Var};
use super::Tensor;
use crate::error::{Result, TseError};

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], g: Vec<f64>) {
    match &mut grads[v.index] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(Tensor::from_parts(shape.to_vec(), g)),
    }
}

impl Tape {
    /// Back-propagates from a scalar `loss`, populating the gradient of every
    /// node that requires one. A second call without [`reset_grads`](Self::reset_grads)
    /// is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = self.node(loss)?;
        if node.value.len() != 1 {
            return Err(TseError::Graph(format!("backward needs a scalar loss, got shape {:?}", node.value.shape())));
        }
        if !node.requires_grad {
            return Err(TseError::Graph("loss is detached from every parameter".into()));
        }
        if self.backward_done {
            return Err(TseError::Graph("backward already ran on this tape; reset gradients first".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.index] = Some(Tensor::from_parts(node.value.shape().to_vec(), vec![1.0]));

        for idx in (0..=loss.index).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        self.grads = grads;
        self.backward_done = true;
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.index].value
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let n = gd.len();
                let ai = |i: usize| if av.len() == 1 { av.data()[0] } else { av.data()[i] };
                let bi = |i: usize| if bv.len() == 1 { bv.data()[0] } else { bv.data()[i] };
                for (operand, other_is_a) in [(*a, false), (*b, true)] {
                    if !self.needs(operand) {
                        continue;
                    }
                    let local: Vec<f64> = (0..n)
                        .map(|i| {
                            let gi = gd[i];
                            match (kind, other_is_a) {
                                (Binary::Add, _) => gi,
                                (Binary::Sub, false) => gi,
                                (Binary::Sub, true) => -gi,
                                (Binary::Mul, false) => gi * bi(i),
                                (Binary::Mul, true) => gi * ai(i),
                                (Binary::Div, false) => gi / bi(i),
                                (Binary::Div, true) => -gi * ai(i) / (bi(i) * bi(i)),
                            }
                        })
                        .collect();
                    let ov = self.val(operand);
                    let reduced = if ov.len() == 1 && n != 1 { vec![local.iter().sum()] } else { local };
                    accumulate(grads, operand, ov.shape(), reduced);
                }
            }
            Op::Unary(kind, x) => {
                let xv = self.val(*x);
                let local: Vec<f64> = xv
                    .data()
                    .iter()
                    .zip(out.data())
                    .zip(gd)
                    .map(|((&xi, &yi), &gi)| match kind {
                        // relu'(0) := 0
                        Unary::Relu => {
                            if xi > 0.0 {
                                gi
                            } else {
                                0.0
                            }
                        }
                        Unary::Exp => gi * yi,
                        Unary::Log => gi / xi,
                        Unary::Sqrt => gi * 0.5 / yi,
                        Unary::Sigmoid => gi * yi * (1.0 - yi),
                        Unary::Tanh => gi * (1.0 - yi * yi),
                    })
                    .collect();
                accumulate(grads, *x, xv.shape(), local);
            }
            Op::Scale(x, f) => {
                accumulate(grads, *x, out.shape(), gd.iter().map(|v| v * f).collect());
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                let shape = self.val(*x).shape().to_vec();
                accumulate(grads, *x, &shape, gd.to_vec());
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul_bt_acc(gd, bv.data(), &mut da, m, n, k);
                    accumulate(grads, *a, av.shape(), da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::matmul_at_acc(av.data(), gd, &mut db, m, k, n);
                    accumulate(grads, *b, bv.shape(), db);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (bs, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
                if self.needs(*a) {
                    let mut da = vec![0.0; bs * m * k];
                    for i in 0..bs {
                        kernels::matmul_bt_acc(
                            &gd[i * m * n..(i + 1) * m * n],
                            &bv.data()[i * k * n..(i + 1) * k * n],
                            &mut da[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    accumulate(grads, *a, av.shape(), da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; bs * k * n];
                    for i in 0..bs {
                        kernels::matmul_at_acc(
                            &av.data()[i * m * k..(i + 1) * m * k],
                            &gd[i * m * n..(i + 1) * m * n],
                            &mut db[i * k * n..(i + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    accumulate(grads, *b, bv.shape(), db);
                }
            }
            Op::AddBias(x, b) => {
                if self.needs(*x) {
                    accumulate(grads, *x, out.shape(), gd.to_vec());
                }
                if self.needs(*b) {
                    let n = self.val(*b).len();
                    let mut db = vec![0.0; n];
                    for row in gd.chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *b, &[n], db);
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = kernels::axis_split(out.shape(), *axis);
                let y = out.data();
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * n * inner + j * inner + i;
                        let dot: f64 = (0..n).map(|j| gd[at(j)] * y[at(j)]).sum();
                        for j in 0..n {
                            dx[at(j)] = y[at(j)] * (gd[at(j)] - dot);
                        }
                    }
                }
                accumulate(grads, *x, out.shape(), dx);
            }
            Op::LayerNorm { x, gain, bias, normalized, inv_std } => {
                let d = *out.shape().last().unwrap_or(&1);
                let gv = self.val(*gain).data();
                if self.needs(*gain) {
                    let mut dg = vec![0.0; d];
                    for (row_g, row_n) in gd.chunks(d).zip(normalized.chunks(d)) {
                        for j in 0..d {
                            dg[j] += row_g[j] * row_n[j];
                        }
                    }
                    accumulate(grads, *gain, &[d], dg);
                }
                if self.needs(*bias) {
                    let mut db = vec![0.0; d];
                    for row in gd.chunks(d) {
                        for (acc, v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    accumulate(grads, *bias, &[d], db);
                }
                if self.needs(*x) {
                    let mut dx = vec![0.0; gd.len()];
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let row_g = &gd[r * d..(r + 1) * d];
                        let row_n = &normalized[r * d..(r + 1) * d];
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..d {
                            let dxh = row_g[j] * gv[j];
                            s1 += dxh;
                            s2 += dxh * row_n[j];
                        }
                        for j in 0..d {
                            let dxh = row_g[j] * gv[j];
                            dx[r * d + j] = inv / d as f64 * (d as f64 * dxh - s1 - row_n[j] * s2);
                        }
                    }
                    accumulate(grads, *x, out.shape(), dx);
                }
            }
            Op::Sum(x) => {
                let xv = self.val(*x);
                accumulate(grads, *x, xv.shape(), vec![gd[0]; xv.len()]);
            }
            Op::SumAxis { x, axis } => {
                let xv = self.val(*x);
                let (outer, n, inner) = kernels::axis_split(xv.shape(), *axis);
                let mut dx = vec![0.0; xv.len()];
                for o in 0..outer {
                    for j in 0..n {
                        dx[(o * n + j) * inner..(o * n + j + 1) * inner].copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                accumulate(grads, *x, xv.shape(), dx);
            }
            Op::Permute { x, perm } => {
                let inv = kernels::inverse_permutation(perm);
                let (shape, dx) = kernels::permute(gd, out.shape(), &inv);
                accumulate(grads, *x, &shape, dx);
            }
            Op::Concat { inputs, axis } => {
                let shape = out.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis];
                let mut offset = 0;
                for &v in inputs {
                    let vs = self.val(v).shape().to_vec();
                    let width = vs[*axis] * inner;
                    if self.needs(v) {
                        let mut dv = Vec::with_capacity(outer * width);
                        for o in 0..outer {
                            let base = o * total * inner + offset;
                            dv.extend_from_slice(&gd[base..base + width]);
                        }
                        accumulate(grads, v, &vs, dv);
                    }
                    offset += width;
                }
            }
            Op::Resize { x, axis } => {
                let xv = self.val(*x);
                let (outer, n, inner) = kernels::axis_split(xv.shape(), *axis);
                let len = out.shape()[*axis];
                let keep = n.min(len);
                let mut dx = vec![0.0; xv.len()];
                for o in 0..outer {
                    dx[o * n * inner..o * n * inner + keep * inner]
                        .copy_from_slice(&gd[o * len * inner..o * len * inner + keep * inner]);
                }
                accumulate(grads, *x, xv.shape(), dx);
            }
            Op::ExpandRows(x) => {
                let xv = self.val(*x);
                let n = xv.len();
                let mut dx = vec![0.0; n];
                for row in gd.chunks(n) {
                    for (d, v) in dx.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                accumulate(grads, *x, xv.shape(), dx);
            }
            Op::Conv1d { x, w, stride, dilation } => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                let dims = conv_dims(xv.shape(), wv.shape(), *stride, *dilation)?;
                let (dx, dw) = kernels::conv1d_backward(xv.data(), wv.data(), gd, &dims);
                if self.needs(*x) {
                    accumulate(grads, *x, xv.shape(), dx);
                }
                if self.needs(*w) {
                    accumulate(grads, *w, wv.shape(), dw);
                }
            }
            Op::ConvTranspose1d { x, w, stride } => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                let (c_in, len_in) = (xv.shape()[0], xv.shape()[1]);
                let (c_out, k) = (wv.shape()[1], wv.shape()[2]);
                let (dx, dw) = kernels::conv1d_transpose_backward(xv.data(), wv.data(), gd, c_in, c_out, k, len_in, *stride);
                if self.needs(*x) {
                    accumulate(grads, *x, xv.shape(), dx);
                }
                if self.needs(*w) {
                    accumulate(grads, *w, wv.shape(), dw);
                }
            }
            Op::Chunk { x, layout } => {
                let xv = self.val(*x);
                let d = xv.shape()[1];
                accumulate(grads, *x, xv.shape(), layout.scatter_add(gd, d));
            }
            Op::OverlapAdd { x, layout } => {
                let xv = self.val(*x);
                let d = xv.shape()[2];
                accumulate(grads, *x, xv.shape(), layout.overlap_add_adjoint(gd, d));
            }
            Op::CrossEntropy { logits, target, probs } => {
                let mut dl: Vec<f64> = probs.iter().map(|p| p * gd[0]).collect();
                dl[*target] -= gd[0];
                let shape = self.val(*logits).shape().to_vec();
                accumulate(grads, *logits, &shape, dl);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tensor;
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let s = t.sum(x).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient_power_rule() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().unwrap().item().unwrap(), 6.0);
    }

    #[test]
    fn backward_twice_needs_reset() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(1.0));
        let y = t.scale(x, 2.0).unwrap();
        t.backward(y).unwrap();
        assert!(matches!(t.backward(y), Err(TseError::Graph(_))));
        t.reset_grads();
        t.backward(y).unwrap();
    }

    #[test]
    fn non_scalar_or_detached_loss_rejected() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(t.backward(x).is_err());
        let c = t.constant(Tensor::scalar(1.0));
        let y = t.scale(c, 3.0).unwrap();
        assert!(t.backward(y).is_err());
    }

    #[test]
    fn foreign_variable_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.param(Tensor::scalar(1.0));
        assert!(b.relu(x).is_err());
    }
}
