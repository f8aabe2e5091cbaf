//! Multi-head attention, cross-attention cue fusion and post-LN transformer layers.

use crate::error::{Result, TseError};
use crate::nn::{glorot, Bound, LayerNorm, Linear, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

/// Sinusoidal positional encoding `[len × dim]`.
pub fn positional_encoding(len: usize, dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for i in 0..dim {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = pos as f64 / rate;
            data.push(if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Tensor::from_parts(vec![len, dim], data)
}

/// Per-site cue projections `θ_Qe, θ_Ke, θ_Ve`, each `[D×D]`.
#[derive(Clone, Debug)]
pub struct CueProjections {
    pub q: ParamId,
    pub k: ParamId,
    pub v: ParamId,
}

impl CueProjections {
    fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, d: usize) -> Self {
        let mut mk = |s: &str| store.add(format!("{name}.theta_{s}e"), glorot(rng, &[d, d], d, d));
        CueProjections { q: mk("q"), k: mk("k"), v: mk("v") }
    }

    pub fn ids(&self) -> [ParamId; 3] {
        [self.q, self.k, self.v]
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, dim: usize, heads: usize) -> Self {
        MultiHeadAttention {
            q: Linear::new(store, rng, &format!("{name}.q"), dim, dim, true),
            k: Linear::new(store, rng, &format!("{name}.k"), dim, dim, true),
            v: Linear::new(store, rng, &format!("{name}.v"), dim, dim, true),
            out: Linear::new(store, rng, &format!("{name}.o"), dim, dim, true),
            heads,
            dim,
        }
    }

    /// `[B×L×D] → [(B·H)×L×d_head]`
    fn split_heads(&self, tape: &mut Tape, x: Var, b: usize, l: usize) -> Result<Var> {
        let dh = self.dim / self.heads;
        let x = tape.reshape(x, &[b, l, self.heads, dh])?;
        let x = tape.permute(x, &[0, 2, 1, 3])?;
        tape.reshape(x, &[b * self.heads, l, dh])
    }

    /// Attention over axis 1 of `x[B×L×D]`. `cue_terms`, when present, are
    /// the `[B×L×D]` broadcasts of `Eθ_Qe`, `Eθ_Ke`, `Eθ_Ve` added to the
    /// query, key and value projections.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var, cue_terms: Option<[Var; 3]>) -> Result<Var> {
        let shape = tape.shape(x)?.to_vec();
        let (b, l) = (shape[0], shape[1]);
        let mut q = self.q.forward(tape, p, x)?;
        let mut k = self.k.forward(tape, p, x)?;
        let mut v = self.v.forward(tape, p, x)?;
        if let Some([cq, ck, cv]) = cue_terms {
            q = tape.add(q, cq)?;
            k = tape.add(k, ck)?;
            v = tape.add(v, cv)?;
        }
        let q = self.split_heads(tape, q, b, l)?;
        let k = self.split_heads(tape, k, b, l)?;
        let v = self.split_heads(tape, v, b, l)?;
        let kt = tape.permute(k, &[0, 2, 1])?;
        let scores = tape.bmm(q, kt)?;
        let scores = tape.scale(scores, 1.0 / ((self.dim / self.heads) as f64).sqrt())?;
        let attn = tape.softmax(scores, 2)?;
        let ctx = tape.bmm(attn, v)?;
        let ctx = tape.reshape(ctx, &[b, self.heads, l, self.dim / self.heads])?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[b, l, self.dim])?;
        self.out.forward(tape, p, ctx)
    }
}

/// Post-LN transformer layer; with `cue` it is a cross-attention fusion layer.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub attn: MultiHeadAttention,
    pub cue: Option<CueProjections>,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
}

impl TransformerLayer {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, dim: usize, heads: usize, ff: usize, fusion: bool) -> Self {
        let attn = MultiHeadAttention::new(store, rng, &format!("{name}.attn"), dim, heads);
        let cue = fusion.then(|| CueProjections::new(store, rng, &format!("{name}.cue"), dim));
        TransformerLayer {
            attn,
            cue,
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            ff1: Linear::new(store, rng, &format!("{name}.ff1"), dim, ff, true),
            ff2: Linear::new(store, rng, &format!("{name}.ff2"), ff, dim, true),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
        }
    }

    fn feed_forward(&self, tape: &mut Tape, p: &Bound, y: Var) -> Result<Var> {
        let f = self.ff1.forward(tape, p, y)?;
        let f = tape.relu(f)?;
        let f = self.ff2.forward(tape, p, f)?;
        let r = tape.add(y, f)?;
        self.ln2.forward(tape, p, r)
    }

    pub fn self_attention(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let a = self.attn.forward(tape, p, x, None)?;
        let r = tape.add(x, a)?;
        let y = self.ln1.forward(tape, p, r)?;
        self.feed_forward(tape, p, y)
    }

    /// `LN(x + MHCA(x, e))` then the feed-forward sublayer. `cue` is the
    /// projected cue `[D]`.
    pub fn mhca_fuse(&self, tape: &mut Tape, p: &Bound, x: Var, cue: Var) -> Result<Var> {
        let proj = self.cue.as_ref().ok_or_else(|| TseError::Graph("mhca_fuse on a layer without cue projections".into()))?;
        let shape = tape.shape(x)?.to_vec();
        let d = *shape.last().unwrap();
        if tape.shape(cue)? != [d] {
            return Err(TseError::shape("mhca_fuse", format!("cue {:?} does not match feature dim {d}", tape.shape(cue)?)));
        }
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let row = tape.reshape(cue, &[1, d])?;
        let mut terms = [x; 3];
        for (slot, id) in terms.iter_mut().zip(proj.ids()) {
            let t = tape.matmul(row, p[id])?;
            let t = tape.reshape(t, &[d])?;
            let t = tape.expand_rows(t, rows)?;
            *slot = tape.reshape(t, &shape)?;
        }
        let a = self.attn.forward(tape, p, x, Some(terms))?;
        let r = tape.add(x, a)?;
        let y = self.ln1.forward(tape, p, r)?;
        self.feed_forward(tape, p, y)
    }
}
