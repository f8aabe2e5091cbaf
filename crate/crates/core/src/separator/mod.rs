//! Dual-path transformer extractor conditioned on a speaker cue.
//!
//! Encoder (strided conv + relu) → layernorm + linear → chunking → N dual-path
//! blocks (IntraT over frames within a chunk, InterT across chunks; the first
//! layer of each is cross-attention fusion with the cue) → relu + grid linear
//! → overlap-add → output linear → mask nonlinearity → masked features →
//! transposed-conv decoder.

mod attention;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use attention::{positional_encoding, CueProjections, MultiHeadAttention, TransformerLayer};

use crate::audio::Waveform;
use crate::checkpoint::{self, SEPARATOR_MAGIC};
use crate::error::{Result, TseError};
use crate::nn::{glorot, Bound, LayerNorm, Linear, ParamId, ParamStore};
use crate::rng::{rng_for, stream_id};
use crate::tensor::{ChunkLayout, Tape, Tensor, Var};

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Relu,
    Sigmoid,
}

impl FromStr for MaskKind {
    type Err = TseError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(MaskKind::Relu),
            "sigmoid" => Ok(MaskKind::Sigmoid),
            _ => Err(TseError::InvalidArgument(format!("mask must be relu or sigmoid, got {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = TseError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(TseError::InvalidArgument(format!("preset must be desk or paper, got {s:?}"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparatorConfig {
    pub enc_kernel: usize,
    pub enc_stride: usize,
    pub feature_dim: usize,
    pub chunk_len: usize,
    pub chunk_overlap: f64,
    pub n_blocks: usize,
    pub l_ca: usize,
    pub l_sa: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub cue_dim: usize,
    pub mask: MaskKind,
    /// L2-normalize the cue before projecting it.
    pub normalize_cue: bool,
}

impl SeparatorConfig {
    pub fn preset(p: Preset, cue_dim: usize) -> Self {
        match p {
            Preset::Desk => SeparatorConfig {
                enc_kernel: 16,
                enc_stride: 8,
                feature_dim: 16,
                chunk_len: 8,
                chunk_overlap: 0.5,
                n_blocks: 1,
                l_ca: 1,
                l_sa: 3,
                n_heads: 2,
                ff_dim: 64,
                cue_dim,
                mask: MaskKind::Relu,
                normalize_cue: false,
            },
            Preset::Paper => SeparatorConfig {
                enc_kernel: 16,
                enc_stride: 8,
                feature_dim: 256,
                chunk_len: 250,
                chunk_overlap: 0.5,
                n_blocks: 4,
                l_ca: 1,
                l_sa: 3,
                n_heads: 8,
                ff_dim: 1024,
                cue_dim,
                mask: MaskKind::Relu,
                normalize_cue: false,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TseError::Config(m));
        if self.enc_kernel == 0 || self.enc_stride == 0 || self.feature_dim == 0 || self.cue_dim == 0 {
            return bad("encoder kernel, stride, feature_dim and cue_dim must be positive".into());
        }
        if self.chunk_len < 2 {
            return bad(format!("chunk_len must be >= 2, got {}", self.chunk_len));
        }
        if !(self.chunk_overlap > 0.0 && self.chunk_overlap < 1.0) {
            return bad(format!("chunk_overlap must be in (0,1), got {}", self.chunk_overlap));
        }
        if self.l_ca < 1 {
            return bad("l_ca must be >= 1".into());
        }
        if self.n_blocks == 0 || self.n_heads == 0 || !self.feature_dim.is_multiple_of(self.n_heads) {
            return bad(format!("feature_dim {} must be divisible by n_heads {}", self.feature_dim, self.n_heads));
        }
        if self.ff_dim == 0 {
            return bad("ff_dim must be positive".into());
        }
        Ok(())
    }

    /// Encoder frame count for `len` samples.
    pub fn frames(&self, len: usize) -> Option<usize> {
        (len >= self.enc_kernel).then(|| (len - self.enc_kernel) / self.enc_stride + 1)
    }

    pub fn decoded_len(&self, frames: usize) -> usize {
        (frames - 1) * self.enc_stride + self.enc_kernel
    }
}

#[derive(Clone, Debug)]
struct DualPathBlock {
    intra: Vec<TransformerLayer>,
    inter: Vec<TransformerLayer>,
}

#[derive(Clone, Debug)]
pub struct SeparatorModel {
    config: SeparatorConfig,
    store: ParamStore,
    encoder: ParamId,
    in_norm: LayerNorm,
    in_linear: Linear,
    cue_proj: Linear,
    blocks: Vec<DualPathBlock>,
    grid_linear: Linear,
    out_linear: Linear,
    decoder: ParamId,
}

/// Result of one forward pass recorded on a tape.
pub struct Forward {
    pub estimate: Var,
    pub mask: Var,
    pub features: Var,
    pub fusion_sites: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    version: u32,
    config: SeparatorConfig,
    /// Optimizer and schedule state of resumable training checkpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training: Option<serde_json::Value>,
}

/// Blob-name prefix of optimizer moments in resumable checkpoints; ignored
/// when loading a model.
pub const OPTIMIZER_BLOB_PREFIX: &str = "adam.";

impl SeparatorModel {
    pub fn new(config: SeparatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, stream_id("separator-init", 0));
        let mut store = ParamStore::new();
        let (d, k) = (config.feature_dim, config.enc_kernel);
        let encoder = store.add("encoder.w", glorot(&mut rng, &[d, 1, k], k, d * k));
        let in_norm = LayerNorm::new(&mut store, "in.ln", d);
        let in_linear = Linear::new(&mut store, &mut rng, "in.linear", d, d, true);
        let cue_proj = Linear::new(&mut store, &mut rng, "cue.proj", config.cue_dim, d, true);
        let mut blocks = Vec::new();
        for b in 0..config.n_blocks {
            let mut path = |tag: &str| {
                (0..config.l_ca + config.l_sa)
                    .map(|i| {
                        TransformerLayer::new(
                            &mut store,
                            &mut rng,
                            &format!("block{b}.{tag}.layer{i}"),
                            d,
                            config.n_heads,
                            config.ff_dim,
                            i < config.l_ca,
                        )
                    })
                    .collect::<Vec<_>>()
            };
            let intra = path("intra");
            let inter = path("inter");
            blocks.push(DualPathBlock { intra, inter });
        }
        let grid_linear = Linear::new(&mut store, &mut rng, "head.grid", d, d, true);
        let out_linear = Linear::new(&mut store, &mut rng, "head.out", d, d, true);
        let decoder = store.add("decoder.w", glorot(&mut rng, &[d, 1, k], d * k, k));
        Ok(SeparatorModel { config, store, encoder, in_norm, in_linear, cue_proj, blocks, grid_linear, out_linear, decoder })
    }

    pub fn config(&self) -> &SeparatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Every `θ_Qe, θ_Ke, θ_Ve` of every fusion site.
    pub fn cue_projection_ids(&self) -> Vec<ParamId> {
        self.blocks
            .iter()
            .flat_map(|b| b.intra.iter().chain(&b.inter))
            .filter_map(|l| l.cue.as_ref())
            .flat_map(|c| c.ids())
            .collect()
    }

    pub fn zero_cue_projections(&mut self) {
        for id in self.cue_projection_ids() {
            let t = self.store.get_mut(id);
            *t = Tensor::zeros(t.shape());
        }
    }

    /// `[T×D]` latent features: strided conv then relu.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, wave: &[f64]) -> Result<Var> {
        let c = &self.config;
        if wave.len() < c.enc_kernel {
            return Err(TseError::TooShort { op: "encode", needed: c.enc_kernel, got: wave.len() });
        }
        let x = tape.constant(Tensor::new(vec![1, wave.len()], wave.to_vec())?);
        let y = tape.conv1d(x, p[self.encoder], c.enc_stride, 1)?;
        let y = tape.relu(y)?;
        tape.transpose(y)
    }

    /// Cue vector `[D]` after optional normalization and the shared projection.
    pub fn project_cue(&self, tape: &mut Tape, p: &Bound, cue: &[f64]) -> Result<Var> {
        if cue.len() != self.config.cue_dim {
            return Err(TseError::shape("cue", format!("cue has dim {}, model expects {}", cue.len(), self.config.cue_dim)));
        }
        if let Some(i) = cue.iter().position(|v| !v.is_finite()) {
            return Err(TseError::Data(format!("non-finite cue value at index {i}")));
        }
        let mut v = cue.to_vec();
        if self.config.normalize_cue {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                v.iter_mut().for_each(|x| *x /= n);
            }
        }
        let c = tape.constant(Tensor::new(vec![1, v.len()], v)?);
        let e = self.cue_proj.forward(tape, p, c)?;
        tape.reshape(e, &[self.config.feature_dim])
    }

    fn run_path(&self, tape: &mut Tape, p: &Bound, layers: &[TransformerLayer], x: Var, cue: Option<Var>, sites: &mut usize) -> Result<Var> {
        let shape = tape.shape(x)?.to_vec();
        let pe = positional_encoding(shape[1], shape[2]);
        let mut full = Vec::with_capacity(shape.iter().product());
        for _ in 0..shape[0] {
            full.extend_from_slice(pe.data());
        }
        let pe = tape.constant(Tensor::new(shape.clone(), full)?);
        let mut y = tape.add(x, pe)?;
        for layer in layers {
            y = match (cue, layer.cue.is_some()) {
                (Some(c), true) => {
                    *sites += 1;
                    layer.mhca_fuse(tape, p, y, c)?
                }
                _ => layer.self_attention(tape, p, y)?,
            };
        }
        tape.add(x, y)
    }

    /// Mask `[T×D]` for latent features `h`; returns the number of fusion
    /// sites visited. Without a cue the fusion layers run as plain
    /// self-attention.
    pub fn masking_forward(&self, tape: &mut Tape, p: &Bound, h: Var, cue: Option<Var>) -> Result<(Var, usize)> {
        let c = &self.config;
        let frames = tape.shape(h)?[0];
        let layout = ChunkLayout::new(frames, c.chunk_len, c.chunk_overlap)?;
        let x = self.in_norm.forward(tape, p, h)?;
        let x = self.in_linear.forward(tape, p, x)?;
        let mut x = tape.chunk(x, layout)?;
        let mut sites = 0;
        for block in &self.blocks {
            x = self.run_path(tape, p, &block.intra, x, cue, &mut sites)?;
            let t = tape.permute(x, &[1, 0, 2])?;
            let t = self.run_path(tape, p, &block.inter, t, cue, &mut sites)?;
            x = tape.permute(t, &[1, 0, 2])?;
        }
        let x = tape.relu(x)?;
        let x = self.grid_linear.forward(tape, p, x)?;
        let x = tape.overlap_add(x, layout)?;
        let x = self.out_linear.forward(tape, p, x)?;
        let m = match c.mask {
            MaskKind::Relu => tape.relu(x)?,
            MaskKind::Sigmoid => tape.sigmoid(x)?,
        };
        Ok((m, sites))
    }

    /// Transposed-conv decoder of masked features `[T×D]` to `len` samples.
    pub fn decode(&self, tape: &mut Tape, p: &Bound, masked: Var, len: usize) -> Result<Var> {
        let x = tape.transpose(masked)?;
        let y = tape.conv1d_transpose(x, p[self.decoder], self.config.enc_stride)?;
        let n = tape.shape(y)?[1];
        let y = tape.reshape(y, &[n])?;
        if n == len {
            Ok(y)
        } else {
            tape.resize_axis(y, 0, len)
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, mixture: &[f64], cue: Option<&[f64]>) -> Result<Forward> {
        let h = self.encode(tape, p, mixture)?;
        let e = cue.map(|c| self.project_cue(tape, p, c)).transpose()?;
        let (m, fusion_sites) = self.masking_forward(tape, p, h, e)?;
        let hm = tape.mul(h, m)?;
        let estimate = self.decode(tape, p, hm, mixture.len())?;
        Ok(Forward { estimate, mask: m, features: h, fusion_sites })
    }

    pub fn extract(&self, mixture: &Waveform, cue: &[f64]) -> Result<Waveform> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, false);
        let f = self.forward(&mut tape, &p, mixture.samples(), Some(cue))?;
        Waveform::new(tape.value(f.estimate)?.data().to_vec(), mixture.sample_rate())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_string(&CheckpointHeader { version: CHECKPOINT_VERSION, config: self.config.clone(), training: None })
            .expect("header serializes");
        checkpoint::encode(SEPARATOR_MAGIC, &header, self.store.iter())
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let c = checkpoint::decode(bytes, SEPARATOR_MAGIC, origin)?;
        let h: CheckpointHeader = serde_json::from_str(&c.header).map_err(|e| TseError::format(origin, "header", e.to_string()))?;
        if h.version != CHECKPOINT_VERSION {
            return Err(TseError::format(origin, "version", format!("unsupported separator version {}", h.version)));
        }
        let mut m = SeparatorModel::new(h.config, 0)?;
        let blobs = c.blobs.into_iter().filter(|(n, _)| !n.starts_with(OPTIMIZER_BLOB_PREFIX)).collect();
        m.store.load_from(blobs)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| TseError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| TseError::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> SeparatorModel {
        SeparatorModel::new(SeparatorConfig::preset(Preset::Desk, 4), 3).unwrap()
    }

    fn wave(n: usize) -> Vec<f64> {
        (0..n).map(|i| (0.07 * i as f64).sin() * 0.5 + (0.31 * i as f64).cos() * 0.2).collect()
    }

    #[test]
    fn encoder_lengths() {
        let m = desk();
        for (len, t) in [(8000, 999), (16, 1)] {
            let mut tape = Tape::new();
            let p = m.params().bind(&mut tape, false);
            let h = m.encode(&mut tape, &p, &wave(len)).unwrap();
            assert_eq!(tape.shape(h).unwrap(), &[t, 16]);
        }
        let mut tape = Tape::new();
        let p = m.params().bind(&mut tape, false);
        let h = m.encode(&mut tape, &p, &[0.0; 64]).unwrap();
        assert!(tape.value(h).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(m.encode(&mut tape, &p, &[0.0; 15]).is_err());
        assert_eq!(m.config().decoded_len(999), 8000);
    }

    #[test]
    fn shapes_and_nonnegative_mask() {
        let m = desk();
        let mut tape = Tape::new();
        let p = m.params().bind(&mut tape, false);
        let f = m.forward(&mut tape, &p, &wave(805), Some(&[0.3, -0.2, 0.5, 0.1])).unwrap();
        assert_eq!(tape.shape(f.mask).unwrap(), tape.shape(f.features).unwrap());
        assert!(tape.value(f.mask).unwrap().data().iter().all(|&v| v >= 0.0));
        assert_eq!(tape.shape(f.estimate).unwrap(), &[805]);
        assert_eq!(f.fusion_sites, 2);
    }

    #[test]
    fn cue_dim_checked() {
        let m = desk();
        let mut tape = Tape::new();
        let p = m.params().bind(&mut tape, false);
        assert!(m.forward(&mut tape, &p, &wave(200), Some(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = desk();
        let back = SeparatorModel::from_bytes(&m.to_bytes(), "mem").unwrap();
        assert_eq!(back.params(), m.params());
        let w = Waveform::new(wave(300), 8000).unwrap();
        assert_eq!(back.extract(&w, &[1.0; 4]).unwrap(), m.extract(&w, &[1.0; 4]).unwrap());
    }

    #[test]
    fn zero_mask_gives_silence() {
        let m = desk();
        let mut tape = Tape::new();
        let p = m.params().bind(&mut tape, false);
        let z = tape.constant(Tensor::zeros(&[20, 16]));
        let y = m.decode(&mut tape, &p, z, 168).unwrap();
        assert!(tape.value(y).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
