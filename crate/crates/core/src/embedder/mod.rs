//! Speaker embedding networks: a dilated-convolution frame encoder followed by
//! statistics pooling (x-vector style) or Gaussian posterior pooling
//! (xi-vector style), trained by speaker classification.

mod archive;
mod features;
mod pool;
mod train;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use archive::{read_archive, write_archive, write_jsonl_mirror, ArchiveRecord};
pub use features::{hz_to_mel, logmel, mel_edges_hz, mel_filterbank, mel_to_hz, FrameConfig, FrameFeatures, LOG_FLOOR};
pub use pool::{gaussian_posterior_pool, stats_pool, STATS_EPS};
pub use train::{train_embedder, EmbedderEpoch, EmbedderTrainConfig, TrainedEmbedder};

use crate::audio::Waveform;
use crate::checkpoint::{self, EMBEDDER_MAGIC};
use crate::error::{Result, TseError};
use crate::nn::{glorot, Bound, LayerNorm, Linear, ParamId, ParamStore};
use crate::rng::{rng_for, stream_id};
use crate::tensor::{Tape, Tensor, Var};

pub const DILATIONS: [usize; 3] = [1, 2, 3];
pub const KERNEL: usize = 3;
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Stats,
    Gaussian,
}

impl Pooling {
    pub fn kind(self) -> EmbeddingKind {
        match self {
            Pooling::Stats => EmbeddingKind::Xvec,
            Pooling::Gaussian => EmbeddingKind::Xivec,
        }
    }
}

impl FromStr for Pooling {
    type Err = TseError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stats" => Ok(Pooling::Stats),
            "gaussian" => Ok(Pooling::Gaussian),
            _ => Err(TseError::InvalidArgument(format!("pooling must be stats or gaussian, got {s:?}"))),
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Stats => "stats",
            Pooling::Gaussian => "gaussian",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type", content = "dim")]
pub enum EmbeddingKind {
    Xvec,
    Xivec,
    Lda(usize),
}

impl fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbeddingKind::Xvec => f.write_str("x-vector"),
            EmbeddingKind::Xivec => f.write_str("xi-vector"),
            EmbeddingKind::Lda(l) => write!(f, "lda({l})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub kind: EmbeddingKind,
    pub speaker_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderConfig {
    pub pooling: Pooling,
    pub sample_rate: u32,
    pub n_mels: usize,
    pub channels: usize,
    pub embed_dim: usize,
}

impl EmbedderConfig {
    pub fn desk(pooling: Pooling) -> Self {
        EmbedderConfig { pooling, sample_rate: crate::audio::DEFAULT_SAMPLE_RATE, n_mels: 24, channels: 64, embed_dim: 32 }
    }

    pub fn paper(pooling: Pooling) -> Self {
        EmbedderConfig { pooling, sample_rate: crate::audio::DEFAULT_SAMPLE_RATE, n_mels: 40, channels: 512, embed_dim: 512 }
    }

    pub fn frame_config(&self) -> FrameConfig {
        FrameConfig::standard(self.sample_rate, self.n_mels)
    }

    /// Frames lost to the unpadded convolutions.
    pub fn receptive_loss(&self) -> usize {
        DILATIONS.iter().map(|d| d * (KERNEL - 1)).sum()
    }

    /// Shortest waveform `embed` accepts.
    pub fn min_samples(&self) -> usize {
        let f = self.frame_config();
        f.win + (self.receptive_loss() + 1) * f.hop
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 || self.channels == 0 || self.embed_dim == 0 || self.sample_rate == 0 {
            return Err(TseError::Config(format!("embedder sizes must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ConvLayer {
    w: ParamId,
    b: ParamId,
    ln: LayerNorm,
    dilation: usize,
}

#[derive(Clone, Debug)]
pub struct EmbedderModel {
    config: EmbedderConfig,
    speakers: Vec<String>,
    store: ParamStore,
    convs: Vec<ConvLayer>,
    heads: Option<(Linear, Linear)>,
    proj: Linear,
    classifier: Linear,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    version: u32,
    config: EmbedderConfig,
    speakers: Vec<String>,
}

impl EmbedderModel {
    /// Random initialization; `speakers` fixes the classifier's output order.
    pub fn new(config: EmbedderConfig, speakers: Vec<String>, seed: u64) -> Result<Self> {
        config.validate()?;
        if speakers.len() < 2 {
            return Err(TseError::Data(format!("embedder needs at least 2 speakers, got {}", speakers.len())));
        }
        let mut rng = rng_for(seed, stream_id("embedder-init", 0));
        let mut store = ParamStore::new();
        let c = config.channels;
        let mut convs = Vec::new();
        let mut c_in = config.n_mels;
        for (i, &d) in DILATIONS.iter().enumerate() {
            let w = store.add(format!("conv{i}.w"), glorot(&mut rng, &[c, c_in, KERNEL], c_in * KERNEL, c * KERNEL));
            let b = store.add(format!("conv{i}.b"), Tensor::zeros(&[c]));
            let ln = LayerNorm::new(&mut store, &format!("conv{i}.ln"), c);
            convs.push(ConvLayer { w, b, ln, dilation: d });
            c_in = c;
        }
        let (heads, pooled) = match config.pooling {
            Pooling::Stats => (None, 2 * c),
            Pooling::Gaussian => (
                Some((
                    Linear::new(&mut store, &mut rng, "pool.z", c, c, true),
                    Linear::new(&mut store, &mut rng, "pool.log_prec", c, c, true),
                )),
                c,
            ),
        };
        let proj = Linear::new(&mut store, &mut rng, "embed", pooled, config.embed_dim, true);
        let classifier = Linear::new(&mut store, &mut rng, "classifier", config.embed_dim, speakers.len(), true);
        Ok(EmbedderModel { config, speakers, store, convs, heads, proj, classifier })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.config.pooling.kind()
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Per-utterance mean-normalized log-mel features.
    pub fn features(&self, w: &Waveform) -> Result<Tensor> {
        let cfg = self.config.frame_config();
        let needed = self.config.min_samples();
        if w.len() < needed {
            return Err(TseError::TooShort { op: "embed", needed, got: w.len() });
        }
        let mut f = logmel(w, &cfg)?.frames;
        let (t, m) = (f.shape()[0], f.shape()[1]);
        let mut mean = vec![0.0; m];
        for row in f.data().chunks(m) {
            mean.iter_mut().zip(row).for_each(|(a, b)| *a += b / t as f64);
        }
        for row in f.data_mut().chunks_mut(m) {
            row.iter_mut().zip(&mean).for_each(|(a, b)| *a -= b);
        }
        Ok(f)
    }

    /// Embedding from `[T×n_mels]` features recorded on `tape`.
    pub fn embed_var(&self, tape: &mut Tape, p: &Bound, feats: Var) -> Result<Var> {
        let mut x = tape.transpose(feats)?;
        let mut h = x;
        for (i, layer) in self.convs.iter().enumerate() {
            let y = tape.conv1d(x, p[layer.w], 1, layer.dilation)?;
            let y = tape.transpose(y)?;
            let y = tape.add_bias(y, p[layer.b])?;
            let y = tape.relu(y)?;
            h = layer.ln.forward(tape, p, y)?;
            if i + 1 < self.convs.len() {
                x = tape.transpose(h)?;
            }
        }
        let pooled = match &self.heads {
            None => stats_pool(tape, h)?,
            Some((zh, ph)) => {
                let z = zh.forward(tape, p, h)?;
                let lp = ph.forward(tape, p, h)?;
                gaussian_posterior_pool(tape, z, lp)?
            }
        };
        self.proj.forward(tape, p, pooled)
    }

    pub fn logits_var(&self, tape: &mut Tape, p: &Bound, embedding: Var) -> Result<Var> {
        let a = tape.relu(embedding)?;
        self.classifier.forward(tape, p, a)
    }

    pub fn embed_vector(&self, w: &Waveform) -> Result<Vec<f64>> {
        let feats = self.features(w)?;
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape, false);
        let f = tape.constant(feats);
        let e = self.embed_var(&mut tape, &p, f)?;
        Ok(tape.value(e)?.data().to_vec())
    }

    pub fn embed(&self, w: &Waveform, speaker_id: Option<&str>) -> Result<Embedding> {
        Ok(Embedding { vector: self.embed_vector(w)?, kind: self.kind(), speaker_id: speaker_id.map(str::to_string) })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader { version: CHECKPOINT_VERSION, config: self.config.clone(), speakers: self.speakers.clone() };
        let header = serde_json::to_string(&header).expect("header serializes");
        checkpoint::encode(EMBEDDER_MAGIC, &header, self.store.iter())
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let c = checkpoint::decode(bytes, EMBEDDER_MAGIC, origin)?;
        let h: CheckpointHeader = serde_json::from_str(&c.header).map_err(|e| TseError::format(origin, "header", e.to_string()))?;
        if h.version != CHECKPOINT_VERSION {
            return Err(TseError::format(origin, "version", format!("unsupported embedder version {}", h.version)));
        }
        let mut m = EmbedderModel::new(h.config, h.speakers, 0)?;
        m.store.load_from(c.blobs)?;
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
