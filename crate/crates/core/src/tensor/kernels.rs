//! Raw numeric kernels on flat row-major buffers.
//!
//! These carry no autodiff state; the tape calls them for forward values and
//! for the matching vector-Jacobian products.

use crate::error::{Result, TseError};

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ip * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn matmul_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                s += x * y;
            }
            c[i * n + j] += s;
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
pub fn matmul_at_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ip * bv;
            }
        }
    }
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Output shape and data of permuting `data` (of `shape`) by `perm`, where
/// output axis `i` is input axis `perm[i]`.
pub fn permute(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let nd = out_shape.len();
    if nd == 0 {
        return (out_shape, data.to_vec());
    }
    let mut idx = vec![0usize; nd];
    let mut src = 0usize;
    let inner = out_shape[nd - 1];
    let inner_stride = src_strides[nd - 1];
    loop {
        for j in 0..inner {
            out.push(data[src + j * inner_stride]);
        }
        // advance the outer multi-index
        let mut ax = nd - 1;
        loop {
            if ax == 0 {
                return (out_shape, out);
            }
            ax -= 1;
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Splits `shape` around `axis` into (outer, axis_len, inner).
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn conv1d_out_len(len: usize, kernel: usize, stride: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    if len < span {
        None
    } else {
        Some((len - span) / stride + 1)
    }
}

pub struct Conv1dDims {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub stride: usize,
    pub dilation: usize,
}

/// `y[o, j] = Σ_{c,m} w[o, c, m] · x[c, j·stride + m·dilation]`
pub fn conv1d_forward(x: &[f64], w: &[f64], d: &Conv1dDims) -> Vec<f64> {
    let mut y = vec![0.0; d.c_out * d.len_out];
    for o in 0..d.c_out {
        let y_row = &mut y[o * d.len_out..(o + 1) * d.len_out];
        for c in 0..d.c_in {
            let x_row = &x[c * d.len_in..(c + 1) * d.len_in];
            for m in 0..d.kernel {
                let wv = w[(o * d.c_in + c) * d.kernel + m];
                if wv == 0.0 {
                    continue;
                }
                let off = m * d.dilation;
                for (j, yv) in y_row.iter_mut().enumerate() {
                    *yv += wv * x_row[j * d.stride + off];
                }
            }
        }
    }
    y
}

/// Vector-Jacobian products of [`conv1d_forward`] for input and kernels.
pub fn conv1d_backward(x: &[f64], w: &[f64], dy: &[f64], d: &Conv1dDims) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; d.c_in * d.len_in];
    let mut dw = vec![0.0; w.len()];
    for o in 0..d.c_out {
        let dy_row = &dy[o * d.len_out..(o + 1) * d.len_out];
        for c in 0..d.c_in {
            let x_row = &x[c * d.len_in..(c + 1) * d.len_in];
            let dx_row = &mut dx[c * d.len_in..(c + 1) * d.len_in];
            for m in 0..d.kernel {
                let widx = (o * d.c_in + c) * d.kernel + m;
                let wv = w[widx];
                let off = m * d.dilation;
                let mut acc = 0.0;
                for (j, &g) in dy_row.iter().enumerate() {
                    let t = j * d.stride + off;
                    acc += x_row[t] * g;
                    dx_row[t] += wv * g;
                }
                dw[widx] += acc;
            }
        }
    }
    (dx, dw)
}

/// Transposed convolution with kernels laid out `[c_in × c_out × k]`:
/// `y[o, j·stride + m] += x[c, j] · w[c, o, m]`.
pub fn conv1d_transpose_forward(x: &[f64], w: &[f64], c_in: usize, c_out: usize, kernel: usize, len_in: usize, stride: usize) -> Vec<f64> {
    let len_out = (len_in - 1) * stride + kernel;
    let mut y = vec![0.0; c_out * len_out];
    for c in 0..c_in {
        let x_row = &x[c * len_in..(c + 1) * len_in];
        for o in 0..c_out {
            let y_row = &mut y[o * len_out..(o + 1) * len_out];
            let w_row = &w[(c * c_out + o) * kernel..(c * c_out + o + 1) * kernel];
            for (j, &xv) in x_row.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let base = j * stride;
                for (m, &wv) in w_row.iter().enumerate() {
                    y_row[base + m] += xv * wv;
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn conv1d_transpose_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    c_in: usize,
    c_out: usize,
    kernel: usize,
    len_in: usize,
    stride: usize,
) -> (Vec<f64>, Vec<f64>) {
    let len_out = (len_in - 1) * stride + kernel;
    let mut dx = vec![0.0; c_in * len_in];
    let mut dw = vec![0.0; w.len()];
    for c in 0..c_in {
        let x_row = &x[c * len_in..(c + 1) * len_in];
        for o in 0..c_out {
            let dy_row = &dy[o * len_out..(o + 1) * len_out];
            let widx0 = (c * c_out + o) * kernel;
            for j in 0..len_in {
                let base = j * stride;
                let mut acc = 0.0;
                for m in 0..kernel {
                    let g = dy_row[base + m];
                    acc += w[widx0 + m] * g;
                    dw[widx0 + m] += x_row[j] * g;
                }
                dx[c * len_in + j] += acc;
            }
        }
    }
    (dx, dw)
}

/// Bookkeeping for segmenting a `[T × D]` sequence into overlapping chunks of
/// `K` frames and folding it back by overlap-add.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ChunkLayout {
    /// Original number of frames.
    pub frames: usize,
    /// Frames per chunk (K).
    pub chunk_len: usize,
    pub hop: usize,
    /// Number of chunks (S).
    pub chunks: usize,
    /// Zero frames appended after the original sequence.
    pub padding: usize,
}

impl ChunkLayout {
    /// `hop = round(K·(1−overlap))`; the sequence is zero-padded at the end so
    /// that every frame is covered and `(T_pad − K)` is a multiple of the hop.
    pub fn new(frames: usize, chunk_len: usize, overlap: f64) -> Result<Self> {
        if chunk_len < 2 {
            return Err(TseError::InvalidArgument(format!("chunk length must be >= 2, got {chunk_len}")));
        }
        if !(overlap > 0.0 && overlap < 1.0) {
            return Err(TseError::InvalidArgument(format!("chunk overlap must lie in (0,1), got {overlap}")));
        }
        if frames == 0 {
            return Err(TseError::InvalidArgument("cannot chunk an empty sequence".into()));
        }
        let hop = ((chunk_len as f64) * (1.0 - overlap)).round().max(1.0) as usize;
        let hop = hop.min(chunk_len);
        let padded = if frames <= chunk_len {
            chunk_len
        } else {
            let rest = frames - chunk_len;
            chunk_len + rest.div_ceil(hop) * hop
        };
        Ok(ChunkLayout {
            frames,
            chunk_len,
            hop,
            chunks: (padded - chunk_len) / hop + 1,
            padding: padded - frames,
        })
    }

    pub fn padded_frames(&self) -> usize {
        self.frames + self.padding
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.chunk_len >= 2
            && self.hop >= 1
            && self.hop <= self.chunk_len
            && self.chunks >= 1
            && (self.chunks - 1) * self.hop + self.chunk_len == self.padded_frames()
            && self.frames >= 1;
        if ok {
            Ok(())
        } else {
            Err(TseError::InvalidArgument(format!("corrupted chunk metadata {self:?}")))
        }
    }

    /// Number of chunk slots covering each original frame.
    pub fn coverage(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.frames];
        for s in 0..self.chunks {
            for k in 0..self.chunk_len {
                let t = s * self.hop + k;
                if t < self.frames {
                    counts[t] += 1.0;
                }
            }
        }
        counts
    }

    /// `[T × D] → [S × K × D]`
    pub fn chunk(&self, x: &[f64], dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.chunks * self.chunk_len * dim];
        for s in 0..self.chunks {
            for k in 0..self.chunk_len {
                let t = s * self.hop + k;
                if t < self.frames {
                    let dst = (s * self.chunk_len + k) * dim;
                    out[dst..dst + dim].copy_from_slice(&x[t * dim..(t + 1) * dim]);
                }
            }
        }
        out
    }

    /// Adjoint of [`chunk`](Self::chunk): sums chunk slots back onto frames.
    pub fn scatter_add(&self, c: &[f64], dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.frames * dim];
        for s in 0..self.chunks {
            for k in 0..self.chunk_len {
                let t = s * self.hop + k;
                if t < self.frames {
                    let src = (s * self.chunk_len + k) * dim;
                    for (o, v) in out[t * dim..(t + 1) * dim].iter_mut().zip(&c[src..src + dim]) {
                        *o += v;
                    }
                }
            }
        }
        out
    }

    /// `[S × K × D] → [T × D]`, averaging overlapping slots and dropping padding.
    pub fn overlap_add(&self, c: &[f64], dim: usize) -> Vec<f64> {
        let mut out = self.scatter_add(c, dim);
        for (t, count) in self.coverage().into_iter().enumerate() {
            for v in &mut out[t * dim..(t + 1) * dim] {
                *v /= count;
            }
        }
        out
    }

    /// Adjoint of [`overlap_add`](Self::overlap_add).
    pub fn overlap_add_adjoint(&self, dy: &[f64], dim: usize) -> Vec<f64> {
        let counts = self.coverage();
        let mut scaled = dy.to_vec();
        for (t, count) in counts.into_iter().enumerate() {
            for v in &mut scaled[t * dim..(t + 1) * dim] {
                *v /= count;
            }
        }
        self.chunk(&scaled, dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_count_formula() {
        let l = ChunkLayout::new(500, 250, 0.5).unwrap();
        assert_eq!((l.hop, l.chunks, l.padding), (125, 3, 0));
        let l = ChunkLayout::new(250, 250, 0.5).unwrap();
        assert_eq!((l.chunks, l.padding), (1, 0));
        let l = ChunkLayout::new(10, 250, 0.5).unwrap();
        assert_eq!((l.chunks, l.padding), (1, 240));
        let l = ChunkLayout::new(501, 250, 0.5).unwrap();
        assert_eq!((l.chunks, l.padding), (4, 124));
    }

    #[test]
    fn bad_chunk_params_rejected() {
        assert!(ChunkLayout::new(10, 1, 0.5).is_err());
        assert!(ChunkLayout::new(10, 4, 0.0).is_err());
        assert!(ChunkLayout::new(10, 4, 1.0).is_err());
    }

    #[test]
    fn constant_chunks_fold_to_constant() {
        let l = ChunkLayout::new(37, 8, 0.5).unwrap();
        let c = vec![2.5; l.chunks * l.chunk_len * 3];
        let y = l.overlap_add(&c, 3);
        assert!(y.iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn permute_transposes_matrix() {
        let (s, d) = permute(&[1., 2., 3., 4., 5., 6.], &[2, 3], &[1, 0]);
        assert_eq!(s, vec![3, 2]);
        assert_eq!(d, vec![1., 4., 2., 5., 3., 6.]);
    }

    #[test]
    fn conv_length_formula() {
        assert_eq!(conv1d_out_len(8000, 16, 8, 1), Some(999));
        assert_eq!(conv1d_out_len(16, 16, 8, 1), Some(1));
        assert_eq!(conv1d_out_len(15, 16, 8, 1), None);
        assert_eq!(conv1d_out_len(13, 3, 1, 3), Some(7));
    }
}
