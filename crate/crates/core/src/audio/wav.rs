//! Mono 16-bit PCM RIFF/WAVE reader and writer.

use std::fs;
use std::path::Path;

use super::Waveform;
use crate::error::{Result, TseError};

const PCM_SCALE: f64 = 32767.0;

pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let n = w.samples().len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate().to_le_bytes());
    out.extend_from_slice(&(w.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in w.samples() {
        let q = (s.clamp(-1.0, 1.0) * PCM_SCALE).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn decode_wav(bytes: &[u8], path: &str) -> Result<Waveform> {
    let err = |field: &str, detail: String| TseError::format(path, field, detail);
    if bytes.len() < 12 {
        return Err(err("RIFF", "missing RIFF/WAVE header".into()));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(err("RIFF", format!("chunk id {:?}", String::from_utf8_lossy(&bytes[0..4]))));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(err("WAVE", format!("form type {:?}", String::from_utf8_lossy(&bytes[8..12]))));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start + size;
        if body_end > bytes.len() {
            let name = String::from_utf8_lossy(id).into_owned();
            return Err(err(&name, format!("chunk declares {size} bytes but only {} remain", bytes.len() - body_start)));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(err("fmt ", format!("chunk too short ({size} bytes)")));
                }
                let u16_at = |o: usize| u16::from_le_bytes(body[o..o + 2].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                fmt = Some((u16_at(0), u16_at(2), rate, u16_at(14)));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or_else(|| err("fmt ", "missing chunk 'fmt '".into()))?;
    if format != 1 {
        return Err(err("audio_format", format!("{format} is not integer PCM (1)")));
    }
    if channels != 1 {
        return Err(err("channels", format!("{channels} channels, expected mono")));
    }
    if bits != 16 {
        return Err(err("bits_per_sample", format!("{bits}, expected 16")));
    }
    if rate == 0 {
        return Err(err("sample_rate", "zero".into()));
    }
    let data = data.ok_or_else(|| err("data", "missing chunk 'data'".into()))?;
    let samples = data
        .chunks_exact(2)
        .map(|b| (i16::from_le_bytes([b[0], b[1]]) as f64 / PCM_SCALE).max(-1.0))
        .collect();
    Waveform::new(samples, rate)
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path).map_err(|e| TseError::io(path, e))?;
    decode_wav(&bytes, &path.display().to_string())
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| TseError::io(parent, e))?;
        }
    }
    fs::write(path, encode_wav(w)).map_err(|e| TseError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(n: usize) -> Waveform {
        let s = (0..n).map(|i| 0.8 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 8000.0).sin()).collect();
        Waveform::new(s, 8000).unwrap()
    }

    #[test]
    fn round_trip_within_one_lsb() {
        let w = sine(8000);
        let back = decode_wav(&encode_wav(&w), "mem").unwrap();
        assert_eq!(back.sample_rate(), 8000);
        assert_eq!(back.len(), 8000);
        let max_err = w.samples().iter().zip(back.samples()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_err <= 2f64.powi(-15), "max error {max_err}");
    }

    #[test]
    fn stereo_rejected() {
        let mut bytes = encode_wav(&sine(16));
        bytes[22] = 2;
        let e = decode_wav(&bytes, "mem").unwrap_err().to_string();
        assert!(e.contains("channels"), "{e}");
    }

    #[test]
    fn non_pcm16_rejected() {
        let mut bytes = encode_wav(&sine(16));
        bytes[34] = 24;
        assert!(decode_wav(&bytes, "mem").unwrap_err().to_string().contains("bits_per_sample"));
        let mut bytes = encode_wav(&sine(16));
        bytes[20] = 3;
        assert!(decode_wav(&bytes, "mem").unwrap_err().to_string().contains("audio_format"));
    }

    #[test]
    fn truncated_header_names_missing_chunk() {
        let bytes = encode_wav(&sine(16));
        let e = decode_wav(&bytes[..12], "mem").unwrap_err().to_string();
        assert!(e.contains("fmt "), "{e}");
        let e = decode_wav(&bytes[..36], "mem").unwrap_err().to_string();
        assert!(e.contains("data"), "{e}");
        let e = decode_wav(&bytes[..6], "mem").unwrap_err().to_string();
        assert!(e.contains("RIFF"), "{e}");
    }
}
