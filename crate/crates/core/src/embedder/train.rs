use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{EmbedderConfig, EmbedderModel};
use crate::audio::UtterancePool;
use crate::error::{Result, TseError};
use crate::rng::{rng_for, stream_id};
use crate::tensor::{Tape, Tensor};
use crate::trainer::{adam_step, AdamState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Fraction of each speaker's utterances held out for validation.
    pub valid_ratio: f64,
    pub grad_clip_norm: Option<f64>,
}

impl Default for EmbedderTrainConfig {
    fn default() -> Self {
        EmbedderTrainConfig { epochs: 30, lr: 1e-3, seed: 0, valid_ratio: 0.05, grad_clip_norm: Some(5.0) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedderEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_accuracy: Option<f64>,
    pub lr: f64,
}

pub struct TrainedEmbedder {
    pub model: EmbedderModel,
    pub log: Vec<EmbedderEpoch>,
}

fn accuracy(model: &EmbedderModel, set: &[(Tensor, usize)]) -> Result<Option<f64>> {
    if set.is_empty() {
        return Ok(None);
    }
    let mut correct = 0;
    for (f, label) in set {
        let mut tape = Tape::new();
        let p = model.params().bind(&mut tape, false);
        let x = tape.constant(f.clone());
        let e = model.embed_var(&mut tape, &p, x)?;
        let logits = model.logits_var(&mut tape, &p, e)?;
        let v = tape.value(logits)?.data();
        let arg = v.iter().enumerate().fold(0, |b, (i, x)| if *x > v[b] { i } else { b });
        correct += (arg == *label) as usize;
    }
    Ok(Some(correct as f64 / set.len() as f64))
}

/// Speaker-classification training with cross-entropy and Adam, one
/// utterance per step. Each speaker's utterances are split
/// `1 − valid_ratio : valid_ratio` (at least one kept for training).
pub fn train_embedder(pool: &UtterancePool, config: EmbedderConfig, tc: &EmbedderTrainConfig) -> Result<TrainedEmbedder> {
    if pool.num_speakers() < 2 {
        return Err(TseError::Data(format!("embedder training needs at least 2 speakers, got {}", pool.num_speakers())));
    }
    if !(tc.lr > 0.0) || !(0.0..1.0).contains(&tc.valid_ratio) {
        return Err(TseError::Config(format!("invalid embedder training config {tc:?}")));
    }
    let speakers: Vec<String> = pool.speakers().iter().map(|(s, _)| s.clone()).collect();
    let mut model = EmbedderModel::new(config, speakers, tc.seed)?;

    let mut train = Vec::new();
    let mut valid = Vec::new();
    for (label, (_, utts)) in pool.speakers().iter().enumerate() {
        let mut idx: Vec<usize> = (0..utts.len()).collect();
        idx.shuffle(&mut rng_for(tc.seed, stream_id("embedder-split", label as u64)));
        let n_valid = ((utts.len() as f64 * tc.valid_ratio).round() as usize).min(utts.len() - 1);
        for (k, &i) in idx.iter().enumerate() {
            let f = model.features(&utts[i].waveform)?;
            if k < n_valid {
                valid.push((f, label));
            } else {
                train.push((f, label));
            }
        }
    }

    let names: Vec<String> = model.params().iter().map(|(n, _)| n.to_string()).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut adam = AdamState::new(model.params().tensors());
    let mut log = Vec::with_capacity(tc.epochs);
    for epoch in 1..=tc.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(tc.seed, stream_id("embedder-epoch", epoch as u64)));
        let mut total = 0.0;
        for &i in &order {
            let (f, label) = &train[i];
            let mut tape = Tape::new();
            let p = model.params().bind(&mut tape, true);
            let x = tape.constant(f.clone());
            let e = model.embed_var(&mut tape, &p, x)?;
            let logits = model.logits_var(&mut tape, &p, e)?;
            let loss = tape.cross_entropy(logits, *label)?;
            total += tape.value(loss)?.item()?;
            tape.backward(loss)?;
            let grads = p.grads(&tape)?;
            adam_step(model.params_mut().tensors_mut(), &grads, &names, &mut adam, tc.lr, tc.grad_clip_norm)?;
        }
        log.push(EmbedderEpoch {
            epoch,
            train_loss: total / train.len() as f64,
            train_accuracy: accuracy(&model, &train)?.unwrap_or(0.0),
            valid_accuracy: accuracy(&model, &valid)?,
            lr: tc.lr,
        });
    }
    Ok(TrainedEmbedder { model, log })
}
