use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use tse_core::audio::{synth_speaker_utterance, SyntheticSpeakerProfile, Utterance, UtterancePool};
use tse_core::embedder::{EmbedderConfig, EmbedderModel, Pooling};
use tse_core::separator::{Preset, SeparatorConfig, SeparatorModel};
use tse_core::trainer::{dynamic_epoch_set, EmbeddingCue, EpochLog, TrainConfig, TrainData, Trainer};
use tse_core::TseError;

fn pool(speakers: usize, utts: usize, dur: f64) -> UtterancePool {
    let mut p = UtterancePool::new();
    for s in 0..speakers {
        let prof = SyntheticSpeakerProfile::random(700 + s as u64);
        for u in 0..utts {
            let w = synth_speaker_utterance(&prof, dur, u as u64, 8000).unwrap();
            p.push(&format!("s{s}"), Utterance { id: format!("s{s}_{u}"), waveform: w });
        }
    }
    p
}

fn embedder() -> EmbedderModel {
    let cfg = EmbedderConfig { channels: 8, embed_dim: 8, ..EmbedderConfig::desk(Pooling::Stats) };
    EmbedderModel::new(cfg, vec!["a".into(), "b".into()], 4).unwrap()
}

fn data(dynamic: bool) -> TrainData {
    let p = pool(3, 3, 0.25);
    let mix = |epoch| {
        dynamic_epoch_set(&p, 77, epoch, 3, 0.0, 5.0)
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, m)| tse_core::trainer::TseExample::from_mixture(format!("e{epoch}_{i}"), m))
            .collect::<Vec<_>>()
    };
    TrainData { train: mix(1000), valid: mix(2000), pool: dynamic.then(|| p.clone()) }
}

fn config(epochs: u32, dynamic: bool) -> TrainConfig {
    TrainConfig { lr_init: 1e-3, max_epochs: epochs, seed: 11, dynamic_mixing: dynamic, warm_epochs: 0, plateau_patience_epochs: 1, ..Default::default() }
}

fn strip(log: &[EpochLog]) -> Vec<(u32, u64, u64, u64)> {
    log.iter().map(|e| (e.epoch, e.train_loss.to_bits(), e.valid_loss.to_bits(), e.lr.to_bits())).collect()
}

#[test]
fn resume_matches_unbroken_run() {
    for dynamic in [false, true] {
        let emb = embedder();
        let cue = EmbeddingCue { embedder: &emb };
        let d = data(dynamic);
        let sep = || SeparatorModel::new(SeparatorConfig::preset(Preset::Desk, 8), 2).unwrap();

        let mut full = Trainer::new(sep(), config(4, dynamic), &d, &cue).unwrap();
        let full_log = full.train(None, |_| {}).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let mut first = Trainer::new(sep(), config(2, dynamic), &d, &cue).unwrap();
        let mut log = first.train(Some(dir.path()), |_| {}).unwrap();
        let bytes = std::fs::read(dir.path().join("last.ckpt")).unwrap();
        let mut resumed = Trainer::resume(&bytes, "last.ckpt", &d, &cue).unwrap();
        assert_eq!(resumed.state().epoch, 2);
        resumed.set_max_epochs(4);
        log.extend(resumed.train(Some(dir.path()), |_| {}).unwrap());

        assert_eq!(strip(&log), strip(&full_log));
        assert_eq!(resumed.model().to_bytes(), full.model().to_bytes());
        let lines = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 4);
    }
}

#[test]
fn checkpoints_load_as_models() {
    let emb = embedder();
    let cue = EmbeddingCue { embedder: &emb };
    let d = data(false);
    let dir = tempfile::tempdir().unwrap();
    let sep = SeparatorModel::new(SeparatorConfig::preset(Preset::Desk, 8), 2).unwrap();
    let mut t = Trainer::new(sep, config(2, false), &d, &cue).unwrap();
    t.train(Some(dir.path()), |_| {}).unwrap();
    let last = SeparatorModel::load(&dir.path().join("last.ckpt")).unwrap();
    assert_eq!(last.to_bytes(), t.model().to_bytes());
    SeparatorModel::load(&dir.path().join("best.ckpt")).unwrap();
}

#[test]
fn lr_follows_halving_trajectory() {
    let emb = embedder();
    let cue = EmbeddingCue { embedder: &emb };
    let d = data(false);
    let sep = SeparatorModel::new(SeparatorConfig::preset(Preset::Desk, 8), 2).unwrap();
    let mut t = Trainer::new(sep, TrainConfig { lr_init: 0.05, ..config(6, false) }, &d, &cue).unwrap();
    let log = t.train(None, |_| {}).unwrap();
    for e in &log {
        let k = (0.05 / e.lr).log2().round() as i32;
        assert_eq!(e.lr, 0.05 * 0.5f64.powi(k));
    }
    assert_eq!(t.state().schedule.lr, 0.05 * 0.5f64.powi(t.state().schedule.decays as i32));
}

fn mixture_hash(set: &[tse_core::audio::MixtureExample]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for m in set {
        for s in m.mixture.samples() {
            s.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

#[test]
fn dynamic_mixing_epochs_are_distinct() {
    let p = pool(4, 4, 0.1);
    let hashes: HashSet<u64> = (1..=30).map(|e| mixture_hash(&dynamic_epoch_set(&p, 5, e, 4, 0.0, 5.0).unwrap())).collect();
    assert_eq!(hashes.len(), 30);
    let again = dynamic_epoch_set(&p, 5, 7, 4, 0.0, 5.0).unwrap();
    assert!(hashes.contains(&mixture_hash(&again)));
}

#[test]
fn invalid_configs_rejected() {
    let emb = embedder();
    let cue = EmbeddingCue { embedder: &emb };
    let d = data(false);
    let sep = || SeparatorModel::new(SeparatorConfig::preset(Preset::Desk, 8), 2).unwrap();
    for bad in [
        TrainConfig { lr_init: 0.0, ..Default::default() },
        TrainConfig { lr_factor: 1.0, ..Default::default() },
        TrainConfig { plateau_patience_epochs: 0, ..Default::default() },
        TrainConfig { batch_size: 4, ..Default::default() },
        TrainConfig { dynamic_mixing: true, ..Default::default() },
    ] {
        assert!(matches!(Trainer::new(sep(), bad, &d, &cue), Err(TseError::Config(_))));
    }
    let wrong_dim = SeparatorModel::new(SeparatorConfig::preset(Preset::Desk, 5), 2).unwrap();
    assert!(matches!(Trainer::new(wrong_dim, TrainConfig::default(), &d, &cue), Err(TseError::Config(_))));
}
