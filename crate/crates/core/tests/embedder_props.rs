use proptest::prelude::*;
use tse_core::audio::{synth_speaker_utterance, SyntheticSpeakerProfile, Utterance, UtterancePool};
use tse_core::embedder::{
    gaussian_posterior_pool, stats_pool, train_embedder, EmbedderConfig, EmbedderTrainConfig, Pooling,
};
use tse_core::metrics::cosine_similarity;
use tse_core::tensor::{Tape, Tensor};

fn pool(speakers: usize, utts: usize, dur: f64, offset: u64) -> UtterancePool {
    let mut p = UtterancePool::new();
    for s in 0..speakers {
        let prof = SyntheticSpeakerProfile::random(100 + s as u64);
        for u in 0..utts {
            let w = synth_speaker_utterance(&prof, dur, offset + u as u64, 8000).unwrap();
            p.push(&format!("spk{s}"), Utterance { id: format!("spk{s}_{u}"), waveform: w });
        }
    }
    p
}

fn tiny(pooling: Pooling) -> EmbedderConfig {
    EmbedderConfig { channels: 16, embed_dim: 16, ..EmbedderConfig::desk(pooling) }
}

#[test]
fn overfits_four_speakers_and_separates_held_out() {
    let train = pool(4, 20, 0.4, 0);
    let tc = EmbedderTrainConfig { epochs: 50, lr: 3e-3, seed: 5, ..Default::default() };
    let out = train_embedder(&train, tiny(Pooling::Gaussian), &tc).unwrap();
    let hit = out.log.iter().find(|e| e.train_accuracy > 0.95);
    assert!(hit.is_some(), "final train accuracy {}", out.log.last().unwrap().train_accuracy);

    let held = pool(4, 5, 0.4, 1000);
    let mut embs = Vec::new();
    for (spk, utts) in held.speakers() {
        for u in utts {
            embs.push((spk.clone(), out.model.embed_vector(&u.waveform).unwrap()));
        }
    }
    let (mut intra, mut inter, mut ni, mut ne) = (0.0, 0.0, 0, 0);
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            let c = cosine_similarity(&embs[i].1, &embs[j].1);
            if embs[i].0 == embs[j].0 {
                intra += c;
                ni += 1;
            } else {
                inter += c;
                ne += 1;
            }
        }
    }
    assert!(intra / ni as f64 > inter / ne as f64, "intra {} inter {}", intra / ni as f64, inter / ne as f64);
}

#[test]
fn training_is_deterministic() {
    let p = pool(2, 4, 0.3, 0);
    let tc = EmbedderTrainConfig { epochs: 2, seed: 9, ..Default::default() };
    let a = train_embedder(&p, tiny(Pooling::Stats), &tc).unwrap();
    let b = train_embedder(&p, tiny(Pooling::Stats), &tc).unwrap();
    assert_eq!(a.log.last().unwrap().train_loss.to_bits(), b.log.last().unwrap().train_loss.to_bits());
    assert_eq!(a.model.to_bytes(), b.model.to_bytes());
}

#[test]
fn single_speaker_rejected() {
    let p = pool(1, 4, 0.3, 0);
    assert!(train_embedder(&p, tiny(Pooling::Stats), &EmbedderTrainConfig::default()).is_err());
}

fn frames() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, Vec<usize>)> {
    (2usize..8, 1usize..4).prop_flat_map(|(t, d)| {
        (
            Just(t),
            Just(d),
            prop::collection::vec(-3.0f64..3.0, t * d),
            prop::collection::vec(-4.0f64..4.0, t * d),
            Just((0..t).collect::<Vec<_>>()).prop_shuffle(),
        )
    })
}

fn permute_rows(x: &[f64], d: usize, perm: &[usize]) -> Vec<f64> {
    perm.iter().flat_map(|&r| x[r * d..(r + 1) * d].to_vec()).collect()
}

fn eval_stats(x: Vec<f64>, t: usize, d: usize) -> Vec<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::new(vec![t, d], x).unwrap());
    let y = stats_pool(&mut tape, v).unwrap();
    tape.value(y).unwrap().data().to_vec()
}

fn eval_gauss(z: Vec<f64>, lp: Vec<f64>, t: usize, d: usize) -> Vec<f64> {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::new(vec![t, d], z).unwrap());
    let lp = tape.constant(Tensor::new(vec![t, d], lp).unwrap());
    let y = gaussian_posterior_pool(&mut tape, z, lp).unwrap();
    tape.value(y).unwrap().data().to_vec()
}

proptest! {
    #[test]
    fn pooling_permutation_invariant((t, d, z, lp, perm) in frames()) {
        let a = eval_stats(z.clone(), t, d);
        let b = eval_stats(permute_rows(&z, d, &perm), t, d);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let a = eval_gauss(z.clone(), lp.clone(), t, d);
        let b = eval_gauss(permute_rows(&z, d, &perm), permute_rows(&lp, d, &perm), t, d);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_mean_is_convex_combination((t, d, z, lp, _perm) in frames()) {
        let phi = eval_gauss(z.clone(), lp, t, d);
        for k in 0..d {
            let col: Vec<f64> = (0..t).map(|r| z[r * d + k]).collect();
            let lo = col.iter().cloned().fold(0.0, f64::min);
            let hi = col.iter().cloned().fold(0.0, f64::max);
            prop_assert!(phi[k] >= lo - 1e-12 && phi[k] <= hi + 1e-12);
        }
    }

    #[test]
    fn constant_frames_have_eps_std(v in -2.0f64..2.0, t in 2usize..6) {
        let out = eval_stats(vec![v; t * 2], t, 2);
        prop_assert!((out[2] - 1e-4).abs() < 1e-9 && (out[3] - 1e-4).abs() < 1e-9);
    }
}
