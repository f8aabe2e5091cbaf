//! Audio I/O, synthetic speakers, SNR-controlled two-speaker mixing and
//! corpus/mixture manifests.

pub mod manifest;
pub mod mix;
pub mod synth;
pub mod wav;

pub use manifest::{CorpusEntry, CorpusManifest, Manifest, ManifestEntry, ManifestSet, Split};
pub use mix::{dynamic_mix, mix_at_snr, MixOutput, MixtureExample, Utterance, UtterancePool};
pub use synth::{synth_speaker_utterance, SyntheticSpeakerProfile};
pub use wav::{read_wav, write_wav};
pub(crate) use manifest::write_jsonl;

use crate::error::{Result, TseError};

pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

/// Mono time-domain signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(TseError::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(TseError::Data(format!("non-finite sample at index {i}")));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean power over the whole signal.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * factor).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn truncated(&self, len: usize) -> Waveform {
        Waveform {
            samples: self.samples[..len.min(self.samples.len())].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    /// Scales so the peak magnitude equals `peak` (silence is returned unchanged).
    pub fn peak_normalized(&self, peak: f64) -> Waveform {
        let p = self.peak();
        if p == 0.0 {
            self.clone()
        } else {
            self.scaled(peak / p)
        }
    }
}
