//! TOML run configuration shared by every `tse` subcommand.
//!
//! Every section and key is optional; unknown keys are rejected. Command-line
//! flags override file values, and the resolved configuration is echoed into
//! each report.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::DEFAULT_SAMPLE_RATE;
use crate::embedder::{EmbedderConfig, EmbedderTrainConfig, Pooling};
use crate::error::{Result, TseError};
use crate::lda::DEFAULT_SHRINKAGE_EPS;
use crate::metrics::DcfParams;
use crate::separator::{MaskKind, Preset, SeparatorConfig};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub sample_rate: u32,
    pub synth: SynthSection,
    pub mix: MixSection,
    pub embedder: EmbedderSection,
    pub verification: VerificationSection,
    pub lda: LdaSection,
    pub separator: SeparatorSection,
    pub train: TrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            synth: SynthSection::default(),
            mix: MixSection::default(),
            embedder: EmbedderSection::default(),
            verification: VerificationSection::default(),
            lda: LdaSection::default(),
            separator: SeparatorSection::default(),
            train: TrainSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub speakers: usize,
    pub utts: usize,
    pub dur_s: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection { speakers: 8, utts: 10, dur_s: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixSection {
    pub snr_min: f64,
    pub snr_max: f64,
    /// Speaker fractions for train / valid / test.
    pub split_ratios: [f64; 3],
    /// Mixtures drawn per split, train / valid / test.
    pub mixtures: [usize; 3],
}

impl Default for MixSection {
    fn default() -> Self {
        MixSection { snr_min: 0.0, snr_max: 5.0, split_ratios: [0.6, 0.2, 0.2], mixtures: [40, 10, 10] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderSection {
    pub preset: Preset,
    pub pooling: Pooling,
    pub n_mels: Option<usize>,
    pub channels: Option<usize>,
    pub embed_dim: Option<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub valid_ratio: f64,
    /// 0 disables clipping.
    pub grad_clip_norm: f64,
}

impl Default for EmbedderSection {
    fn default() -> Self {
        let t = EmbedderTrainConfig::default();
        EmbedderSection {
            preset: Preset::Desk,
            pooling: Pooling::Gaussian,
            n_mels: None,
            channels: None,
            embed_dim: None,
            epochs: t.epochs,
            lr: t.lr,
            valid_ratio: t.valid_ratio,
            grad_clip_norm: t.grad_clip_norm.unwrap_or(0.0),
        }
    }
}

impl EmbedderSection {
    pub fn model_config(&self, sample_rate: u32) -> EmbedderConfig {
        let base = match self.preset {
            Preset::Desk => EmbedderConfig::desk(self.pooling),
            Preset::Paper => EmbedderConfig::paper(self.pooling),
        };
        EmbedderConfig {
            sample_rate,
            n_mels: self.n_mels.unwrap_or(base.n_mels),
            channels: self.channels.unwrap_or(base.channels),
            embed_dim: self.embed_dim.unwrap_or(base.embed_dim),
            ..base
        }
    }

    pub fn train_config(&self, seed: u64) -> EmbedderTrainConfig {
        EmbedderTrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            seed,
            valid_ratio: self.valid_ratio,
            grad_clip_norm: (self.grad_clip_norm > 0.0).then_some(self.grad_clip_norm),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerificationSection {
    /// Positive and negative trials drawn per test speaker; 0 scores every pair.
    pub trials_per_speaker: usize,
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for VerificationSection {
    fn default() -> Self {
        let d = DcfParams::default();
        VerificationSection { trials_per_speaker: 20, p_target: d.p_target, c_miss: d.c_miss, c_fa: d.c_fa }
    }
}

impl VerificationSection {
    pub fn dcf(&self) -> DcfParams {
        DcfParams { p_target: self.p_target, c_miss: self.c_miss, c_fa: self.c_fa }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LdaSection {
    pub dims: Vec<usize>,
    pub shrinkage: f64,
}

impl Default for LdaSection {
    fn default() -> Self {
        LdaSection { dims: vec![32], shrinkage: DEFAULT_SHRINKAGE_EPS }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeparatorSection {
    pub preset: Preset,
    pub mask: MaskKind,
    pub normalize_cue: bool,
}

impl Default for SeparatorSection {
    fn default() -> Self {
        SeparatorSection { preset: Preset::Desk, mask: MaskKind::Relu, normalize_cue: false }
    }
}

impl SeparatorSection {
    pub fn model_config(&self, cue_dim: usize) -> SeparatorConfig {
        SeparatorConfig { mask: self.mask, normalize_cue: self.normalize_cue, ..SeparatorConfig::preset(self.preset, cue_dim) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr_init: f64,
    pub batch_size: usize,
    pub plateau_patience_epochs: u32,
    pub lr_factor: f64,
    pub warm_epochs: u32,
    pub max_epochs: u32,
    /// 0 disables clipping.
    pub grad_clip_norm: f64,
    pub dynamic_mixing: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr_init: t.lr_init,
            batch_size: t.batch_size,
            plateau_patience_epochs: t.plateau_patience_epochs,
            lr_factor: t.lr_factor,
            warm_epochs: t.warm_epochs,
            max_epochs: t.max_epochs,
            grad_clip_norm: t.grad_clip_norm.unwrap_or(0.0),
            dynamic_mixing: t.dynamic_mixing,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| TseError::Config(format!("{origin}: {e}")))?;
        Ok(c)
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| TseError::io(p, e))?;
                Self::from_toml(&text, &p.display().to_string())
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr_init: t.lr_init,
            batch_size: t.batch_size,
            plateau_patience_epochs: t.plateau_patience_epochs,
            lr_factor: t.lr_factor,
            warm_epochs: t.warm_epochs,
            max_epochs: t.max_epochs,
            grad_clip_norm: (t.grad_clip_norm > 0.0).then_some(t.grad_clip_norm),
            seed: self.seed,
            dynamic_mixing: t.dynamic_mixing,
            snr_min: self.mix.snr_min,
            snr_max: self.mix.snr_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TseError::Config(m));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.synth.speakers == 0 || self.synth.utts == 0 || !(self.synth.dur_s > 0.0) {
            return bad(format!("synth sizes must be positive: {:?}", self.synth));
        }
        let r = self.mix.split_ratios;
        if r.iter().any(|&x| !(x >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split_ratios must be nonnegative and sum to 1, got {r:?}"));
        }
        if !(self.mix.snr_min <= self.mix.snr_max) || !self.mix.snr_min.is_finite() || !self.mix.snr_max.is_finite() {
            return bad(format!("snr range [{}, {}] is invalid", self.mix.snr_min, self.mix.snr_max));
        }
        self.embedder.model_config(self.sample_rate).validate()?;
        if !(self.embedder.lr > 0.0) || !(0.0..1.0).contains(&self.embedder.valid_ratio) {
            return bad("embedder lr must be positive and valid_ratio in [0,1)".into());
        }
        self.verification.dcf().validate()?;
        if self.lda.dims.is_empty() || self.lda.dims.contains(&0) {
            return bad("lda dims must be a nonempty list of positive integers".into());
        }
        if !(self.lda.shrinkage >= 0.0) {
            return bad(format!("lda shrinkage must be nonnegative, got {}", self.lda.shrinkage));
        }
        self.separator.model_config(1).validate()?;
        self.train_config().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sed = 3", "t").is_err());
        assert!(RunConfig::from_toml("[train]\nlr = 1.0", "t").is_err());
        let c = RunConfig::from_toml("seed = 3\n[train]\nlr_init = 0.01", "t").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.lr_init, 0.01);
        assert_eq!(c.train.lr_factor, 0.5);
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.embedder.channels = Some(12);
        c.lda.dims = vec![4, 8];
        let back = RunConfig::from_toml(&c.to_toml(), "t").unwrap();
        assert_eq!(back, c);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = RunConfig::default();
        c.mix.split_ratios = [0.5, 0.5, 0.5];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.train.lr_factor = 1.5;
        assert!(c.validate().is_err());
    }
}
