//! Two-speaker mixing at a controlled SNR and on-the-fly remixing.

use rand::Rng as _;

use super::Waveform;
use crate::error::{Result, TseError};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct MixOutput {
    pub mixture: Waveform,
    /// Target after the common peak rescaling.
    pub target: Waveform,
    /// Interferer after SNR gain and the common peak rescaling.
    pub interferer: Waveform,
    /// Gain applied to the interferer to reach the requested SNR.
    pub interferer_gain: f64,
    /// Common factor applied to all three signals (1.0 when no clipping risk).
    pub peak_scale: f64,
}

/// Mixes `target` with `interferer` so that full-utterance power ratio
/// target/interferer equals `snr_db`. The longer source is truncated to the
/// shorter one. If the mixture peak exceeds 1.0 every signal is scaled by the
/// same factor, which leaves the SNR unchanged.
pub fn mix_at_snr(target: &Waveform, interferer: &Waveform, snr_db: f64) -> Result<MixOutput> {
    if target.sample_rate() != interferer.sample_rate() {
        return Err(TseError::InvalidArgument(format!(
            "sample rates differ: {} vs {}",
            target.sample_rate(),
            interferer.sample_rate()
        )));
    }
    if !snr_db.is_finite() {
        return Err(TseError::InvalidArgument(format!("snr must be finite, got {snr_db}")));
    }
    let len = target.len().min(interferer.len());
    let t = target.truncated(len);
    let i = interferer.truncated(len);
    let (pt, pi) = (t.power(), i.power());
    if pt == 0.0 {
        return Err(TseError::Degenerate("target has zero power".into()));
    }
    if pi == 0.0 {
        return Err(TseError::Degenerate("interferer has zero power".into()));
    }
    let gain = (pt / (pi * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled_i = i.scaled(gain);
    let mix: Vec<f64> = t.samples().iter().zip(scaled_i.samples()).map(|(a, b)| a + b).collect();
    let mixture = Waveform::new(mix, t.sample_rate())?;
    let peak = mixture.peak();
    let peak_scale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    if peak_scale == 1.0 {
        return Ok(MixOutput { mixture, target: t, interferer: scaled_i, interferer_gain: gain, peak_scale });
    }
    Ok(MixOutput {
        mixture: mixture.scaled(peak_scale),
        target: t.scaled(peak_scale),
        interferer: scaled_i.scaled(peak_scale),
        interferer_gain: gain,
        peak_scale,
    })
}

#[derive(Clone, Debug)]
pub struct Utterance {
    pub id: String,
    pub waveform: Waveform,
}

/// Clean utterances grouped by speaker, in a fixed order.
#[derive(Clone, Debug, Default)]
pub struct UtterancePool {
    speakers: Vec<(String, Vec<Utterance>)>,
}

impl UtterancePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, speaker: &str, utt: Utterance) {
        match self.speakers.iter_mut().find(|(s, _)| s == speaker) {
            Some((_, list)) => list.push(utt),
            None => self.speakers.push((speaker.to_string(), vec![utt])),
        }
    }

    pub fn speakers(&self) -> &[(String, Vec<Utterance>)] {
        &self.speakers
    }

    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn utterances(&self, speaker: &str) -> Option<&[Utterance]> {
        self.speakers.iter().find(|(s, _)| s == speaker).map(|(_, u)| u.as_slice())
    }

    pub fn restricted_to(&self, keep: &[String]) -> UtterancePool {
        UtterancePool {
            speakers: self.speakers.iter().filter(|(s, _)| keep.contains(s)).cloned().collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MixtureExample {
    pub mixture: Waveform,
    pub target: Waveform,
    pub interferer: Waveform,
    pub enrollment: Waveform,
    pub target_speaker_id: String,
    pub interferer_speaker_id: String,
    pub target_utt: String,
    pub interferer_utt: String,
    pub enrollment_utt: String,
    pub snr_db: f64,
}

impl MixtureExample {
    pub fn from_parts(
        target_speaker: &str,
        target: &Utterance,
        interferer_speaker: &str,
        interferer: &Utterance,
        enrollment: &Utterance,
        snr_db: f64,
    ) -> Result<Self> {
        if target.id == enrollment.id {
            return Err(TseError::InvalidArgument(format!(
                "enrollment utterance {} must differ from the target utterance",
                enrollment.id
            )));
        }
        let m = mix_at_snr(&target.waveform, &interferer.waveform, snr_db)?;
        Ok(MixtureExample {
            mixture: m.mixture,
            target: m.target,
            interferer: m.interferer,
            enrollment: enrollment.waveform.clone(),
            target_speaker_id: target_speaker.to_string(),
            interferer_speaker_id: interferer_speaker.to_string(),
            target_utt: target.id.clone(),
            interferer_utt: interferer.id.clone(),
            enrollment_utt: enrollment.id.clone(),
            snr_db,
        })
    }
}

/// Draws a fresh mixture: an ordered speaker pair, a target and interferer
/// utterance, a distinct enrollment utterance of the target speaker and an SNR
/// uniform on `[snr_min, snr_max]`.
pub fn dynamic_mix(pool: &UtterancePool, rng: &mut Rng, snr_min: f64, snr_max: f64) -> Result<MixtureExample> {
    let eligible: Vec<usize> = (0..pool.speakers.len()).filter(|&i| pool.speakers[i].1.len() >= 2).collect();
    if pool.speakers.len() < 2 || eligible.is_empty() {
        return Err(TseError::Data(format!(
            "dynamic mixing needs at least 2 speakers with 2 utterances each, pool has {} speakers",
            pool.speakers.len()
        )));
    }
    if pool.speakers.iter().any(|(_, u)| u.len() < 2) {
        return Err(TseError::Data("every speaker in a mixing pool needs at least 2 utterances".into()));
    }
    if !(snr_min <= snr_max) {
        return Err(TseError::InvalidArgument(format!("snr range [{snr_min}, {snr_max}] is empty")));
    }
    let n = pool.speakers.len();
    let ti = rng.gen_range(0..n);
    let mut ii = rng.gen_range(0..n - 1);
    if ii >= ti {
        ii += 1;
    }
    let (tspk, tutts) = &pool.speakers[ti];
    let (ispk, iutts) = &pool.speakers[ii];
    let t_idx = rng.gen_range(0..tutts.len());
    let mut e_idx = rng.gen_range(0..tutts.len() - 1);
    if e_idx >= t_idx {
        e_idx += 1;
    }
    let i_idx = rng.gen_range(0..iutts.len());
    let snr = if snr_max > snr_min { rng.gen_range(snr_min..=snr_max) } else { snr_min };
    MixtureExample::from_parts(tspk, &tutts[t_idx], ispk, &iutts[i_idx], &tutts[e_idx], snr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tone(freq: f64, amp: f64, n: usize) -> Waveform {
        Waveform::new((0..n).map(|i| amp * (0.01 * freq * i as f64).sin()).collect(), 8000).unwrap()
    }

    fn measured_snr(m: &MixOutput) -> f64 {
        10.0 * (m.target.power() / m.interferer.power()).log10()
    }

    #[test]
    fn zero_db_equal_powers() {
        let m = mix_at_snr(&tone(3.0, 0.5, 4000), &tone(7.0, 0.1, 5000), 0.0).unwrap();
        assert!((m.target.power() / m.interferer.power() - 1.0).abs() < 1e-9);
        assert_eq!(m.mixture.len(), 4000);
    }

    #[test]
    fn five_db_power_ratio() {
        let m = mix_at_snr(&tone(3.0, 0.3, 4000), &tone(5.0, 0.2, 4000), 5.0).unwrap();
        let ratio = m.target.power() / m.interferer.power();
        assert!((ratio - 10f64.powf(0.5)).abs() < 1e-9);
    }

    #[test]
    fn peak_rescale_preserves_snr() {
        let m = mix_at_snr(&tone(3.0, 0.95, 4000), &tone(5.0, 0.95, 4000), 0.0).unwrap();
        assert!(m.peak_scale < 1.0);
        assert!(m.mixture.peak() <= 1.0 + 1e-12);
        assert!(measured_snr(&m).abs() < 1e-9);
    }

    #[test]
    fn silent_interferer_rejected() {
        let silent = Waveform::new(vec![0.0; 100], 8000).unwrap();
        assert!(matches!(mix_at_snr(&tone(3.0, 0.5, 100), &silent, 0.0), Err(TseError::Degenerate(_))));
    }

    fn pool(speakers: usize, utts: usize) -> UtterancePool {
        let mut p = UtterancePool::new();
        for s in 0..speakers {
            for u in 0..utts {
                p.push(
                    &format!("s{s}"),
                    Utterance { id: format!("s{s}u{u}"), waveform: tone(1.0 + s as f64 + 0.3 * u as f64, 0.5, 200) },
                );
            }
        }
        p
    }

    #[test]
    fn minimal_pool_gives_valid_example() {
        let p = pool(2, 2);
        let mut rng = Rng::seed_from_u64(1);
        for _ in 0..20 {
            let ex = dynamic_mix(&p, &mut rng, 0.0, 5.0).unwrap();
            assert_ne!(ex.enrollment_utt, ex.target_utt);
            assert_ne!(ex.target_speaker_id, ex.interferer_speaker_id);
            assert!(ex.enrollment_utt.starts_with(&ex.target_speaker_id));
            assert!((0.0..=5.0).contains(&ex.snr_db));
            assert_eq!(ex.mixture.len(), ex.target.len());
            assert_eq!(ex.mixture.len(), ex.interferer.len());
        }
    }

    #[test]
    fn single_speaker_pool_rejected() {
        let mut rng = Rng::seed_from_u64(1);
        assert!(dynamic_mix(&pool(1, 4), &mut rng, 0.0, 5.0).is_err());
        assert!(dynamic_mix(&pool(3, 1), &mut rng, 0.0, 5.0).is_err());
    }

    #[test]
    fn snr_mean_matches_uniform_midpoint() {
        let p = pool(3, 3);
        let mut rng = Rng::seed_from_u64(42);
        let n = 1000;
        let mean = (0..n).map(|_| dynamic_mix(&p, &mut rng, 0.0, 5.0).unwrap().snr_db).sum::<f64>() / n as f64;
        assert!((mean - 2.5).abs() < 0.3, "mean snr {mean}");
    }
}
