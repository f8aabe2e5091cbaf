//! Log-mel filterbank front end.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Result, TseError};
use crate::tensor::Tensor;

pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    pub sample_rate: u32,
    pub win: usize,
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
}

impl FrameConfig {
    /// 25 ms Hamming windows every 10 ms.
    pub fn standard(sample_rate: u32, n_mels: usize) -> Self {
        let win = (0.025 * sample_rate as f64).round() as usize;
        let hop = (0.010 * sample_rate as f64).round() as usize;
        FrameConfig { sample_rate, win, hop, n_fft: win.next_power_of_two(), n_mels }
    }

    pub fn num_frames(&self, len: usize) -> Option<usize> {
        (len >= self.win).then(|| (len - self.win) / self.hop + 1)
    }

    fn validate(&self) -> Result<()> {
        if self.win == 0 || self.hop == 0 || self.n_mels == 0 || self.n_fft < self.win {
            return Err(TseError::InvalidArgument(format!("invalid frame config {self:?}")));
        }
        Ok(())
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Band edges in Hz: `n_mels + 2` points equally spaced on the mel scale
/// from 0 to Nyquist. Band `b` peaks at edge `b + 1`.
pub fn mel_edges_hz(cfg: &FrameConfig) -> Vec<f64> {
    let top = hz_to_mel(cfg.sample_rate as f64 / 2.0);
    (0..cfg.n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (cfg.n_mels + 1) as f64)).collect()
}

/// Triangular filters over the `n_fft/2 + 1` magnitude bins, peak weight 1.
pub fn mel_filterbank(cfg: &FrameConfig) -> Vec<Vec<f64>> {
    let edges = mel_edges_hz(cfg);
    let bins = cfg.n_fft / 2 + 1;
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    (0..cfg.n_mels)
        .map(|b| {
            let (lo, c, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= c {
                        (f - lo) / (c - lo)
                    } else {
                        (hi - f) / (hi - c)
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatures {
    /// `[T × n_mels]`
    pub frames: Tensor,
    pub config: FrameConfig,
}

impl FrameFeatures {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }
}

pub fn logmel(w: &Waveform, cfg: &FrameConfig) -> Result<FrameFeatures> {
    cfg.validate()?;
    if w.sample_rate() != cfg.sample_rate {
        return Err(TseError::InvalidArgument(format!(
            "waveform rate {} differs from feature rate {}",
            w.sample_rate(),
            cfg.sample_rate
        )));
    }
    let t = cfg.num_frames(w.len()).ok_or(TseError::TooShort { op: "logmel", needed: cfg.win, got: w.len() })?;
    let window: Vec<f64> = (0..cfg.win).map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (cfg.win - 1).max(1) as f64).cos()).collect();
    let bank = mel_filterbank(cfg);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let bins = cfg.n_fft / 2 + 1;
    let x = w.samples();
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut mag = vec![0.0; bins];
    let mut out = Vec::with_capacity(t * cfg.n_mels);
    for f in 0..t {
        let start = f * cfg.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < cfg.win { Complex::new(x[start + i] * window[i], 0.0) } else { Complex::new(0.0, 0.0) };
        }
        fft.process(&mut buf);
        for (m, c) in mag.iter_mut().zip(&buf) {
            *m = c.norm();
        }
        for filt in &bank {
            let e: f64 = filt.iter().zip(&mag).map(|(a, b)| a * b).sum();
            out.push(e.max(LOG_FLOOR).ln());
        }
    }
    Ok(FrameFeatures { frames: Tensor::new(vec![t, cfg.n_mels], out)?, config: cfg.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_gives_98_frames() {
        let cfg = FrameConfig::standard(8000, 24);
        assert_eq!((cfg.win, cfg.hop, cfg.n_fft), (200, 80, 256));
        let w = Waveform::new(vec![0.1; 8000], 8000).unwrap();
        assert_eq!(logmel(&w, &cfg).unwrap().num_frames(), 98);
    }

    #[test]
    fn silence_hits_floor() {
        let cfg = FrameConfig::standard(8000, 24);
        let f = logmel(&Waveform::new(vec![0.0; 1000], 8000).unwrap(), &cfg).unwrap();
        assert!(f.frames.data().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn too_short_rejected() {
        let cfg = FrameConfig::standard(8000, 24);
        let e = logmel(&Waveform::new(vec![0.0; 199], 8000).unwrap(), &cfg).unwrap_err();
        assert!(matches!(e, TseError::TooShort { needed: 200, got: 199, .. }));
    }

    #[test]
    fn tone_at_band_centre_dominates() {
        let cfg = FrameConfig::standard(8000, 24);
        let edges = mel_edges_hz(&cfg);
        for band in [6, 12, 18] {
            let f0 = edges[band + 1];
            let s = (0..4000).map(|i| 0.5 * (2.0 * PI * f0 * i as f64 / 8000.0).sin()).collect();
            let feats = logmel(&Waveform::new(s, 8000).unwrap(), &cfg).unwrap();
            for row in feats.frames.data().chunks(24) {
                let arg = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                assert_eq!(arg, band);
            }
        }
    }
}
