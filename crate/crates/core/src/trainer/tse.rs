use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::cue::CueSource;
use super::loss::{si_sdr_loss, si_sdr_loss_value};
use super::schedule::PlateauSchedule;
use crate::audio::{dynamic_mix, Manifest, MixtureExample, UtterancePool, Waveform};
use crate::checkpoint::{self, SEPARATOR_MAGIC};
use crate::error::{Result, TseError};
use crate::metrics::{ExtractionReport, UtteranceMetrics};
use crate::rng::{rng_for, stream_id};
use crate::separator::{SeparatorConfig, SeparatorModel, OPTIMIZER_BLOB_PREFIX};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub batch_size: usize,
    pub plateau_patience_epochs: u32,
    pub lr_factor: f64,
    pub warm_epochs: u32,
    pub max_epochs: u32,
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    pub dynamic_mixing: bool,
    pub snr_min: f64,
    pub snr_max: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_init: 1.5e-4,
            batch_size: 1,
            plateau_patience_epochs: 2,
            lr_factor: 0.5,
            warm_epochs: 20,
            max_epochs: 50,
            grad_clip_norm: Some(5.0),
            seed: 0,
            dynamic_mixing: false,
            snr_min: 0.0,
            snr_max: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TseError::Config(m));
        if !(self.lr_init > 0.0) {
            return bad(format!("lr_init must be positive, got {}", self.lr_init));
        }
        if self.batch_size != 1 {
            return bad(format!("only utterance-level training (batch_size 1) is supported, got {}", self.batch_size));
        }
        if self.plateau_patience_epochs < 1 {
            return bad("plateau_patience_epochs must be >= 1".into());
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad(format!("lr_factor must be in (0,1), got {}", self.lr_factor));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return bad(format!("grad_clip_norm must be positive, got {c}"));
            }
        }
        if !(self.snr_min <= self.snr_max) {
            return bad(format!("snr range [{}, {}] is empty", self.snr_min, self.snr_max));
        }
        Ok(())
    }
}

/// One training or evaluation item.
#[derive(Clone, Debug)]
pub struct TseExample {
    pub id: String,
    pub mixture: Waveform,
    pub target: Waveform,
    pub enrollment: Waveform,
    /// Cache key for the enrollment cue.
    pub enrollment_id: String,
    pub speaker: String,
}

impl TseExample {
    pub fn from_mixture(id: impl Into<String>, m: &MixtureExample) -> Self {
        TseExample {
            id: id.into(),
            mixture: m.mixture.clone(),
            target: m.target.clone(),
            enrollment: m.enrollment.clone(),
            enrollment_id: m.enrollment_utt.clone(),
            speaker: m.target_speaker_id.clone(),
        }
    }

    /// Loads every manifest entry; signals of unequal length are truncated to
    /// the shortest of mixture and target.
    pub fn from_manifest(m: &Manifest) -> Result<Vec<Self>> {
        m.entries
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let l = m.load_entry(i)?;
                let n = l.mixture.len().min(l.target.len());
                Ok(TseExample {
                    id: l.entry.mix.clone(),
                    mixture: l.mixture.truncated(n),
                    target: l.target.truncated(n),
                    enrollment: l.enrollment,
                    enrollment_id: l.entry.enroll.clone(),
                    speaker: l.entry.speaker.clone(),
                })
            })
            .collect()
    }
}

/// Training data: fixed training mixtures, fixed validation mixtures and,
/// for dynamic mixing, the clean utterance pool of the training speakers.
pub struct TrainData {
    pub train: Vec<TseExample>,
    pub valid: Vec<TseExample>,
    pub pool: Option<UtterancePool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u32,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub lr: f64,
    pub wall_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    pub epoch: u32,
    pub step: u64,
    pub schedule: PlateauSchedule,
    pub best_valid_loss: Option<f64>,
}

/// The `n` mixtures drawn for dynamic-mixing epoch `epoch`.
pub fn dynamic_epoch_set(pool: &UtterancePool, seed: u64, epoch: u32, n: usize, snr_min: f64, snr_max: f64) -> Result<Vec<MixtureExample>> {
    let mut rng = rng_for(seed, stream_id("dm-epoch", epoch as u64));
    (0..n).map(|_| dynamic_mix(pool, &mut rng, snr_min, snr_max)).collect()
}

pub struct Trainer<'a> {
    model: SeparatorModel,
    cfg: TrainConfig,
    data: &'a TrainData,
    cues: &'a dyn CueSource,
    state: TrainState,
    adam: AdamState,
    cue_cache: HashMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResumeHeader {
    version: u32,
    config: SeparatorConfig,
    training: ResumeTraining,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResumeTraining {
    train_config: TrainConfig,
    train_state: TrainState,
    adam_step: u64,
}

const CHECKPOINT_VERSION: u32 = 1;

impl<'a> Trainer<'a> {
    pub fn new(model: SeparatorModel, cfg: TrainConfig, data: &'a TrainData, cues: &'a dyn CueSource) -> Result<Self> {
        cfg.validate()?;
        if cues.dim() != model.config().cue_dim {
            return Err(TseError::Config(format!(
                "cue source gives {}-dim cues, separator expects {}",
                cues.dim(),
                model.config().cue_dim
            )));
        }
        if data.train.is_empty() || data.valid.is_empty() {
            return Err(TseError::Data("training needs at least one training and one validation mixture".into()));
        }
        if cfg.dynamic_mixing && data.pool.is_none() {
            return Err(TseError::Config("dynamic mixing needs a clean utterance pool".into()));
        }
        let adam = AdamState::new(model.params().tensors());
        let schedule = PlateauSchedule::new(cfg.lr_init, cfg.lr_factor, cfg.plateau_patience_epochs, cfg.warm_epochs);
        Ok(Trainer {
            model,
            cfg,
            data,
            cues,
            state: TrainState { epoch: 0, step: 0, schedule, best_valid_loss: None },
            adam,
            cue_cache: HashMap::new(),
        })
    }

    pub fn model(&self) -> &SeparatorModel {
        &self.model
    }

    pub fn into_model(self) -> SeparatorModel {
        self.model
    }

    /// Extends or shortens the run, e.g. after [`resume`](Self::resume).
    pub fn set_max_epochs(&mut self, n: u32) {
        self.cfg.max_epochs = n;
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    fn cue_for(&mut self, key: &str, enrollment: &Waveform) -> Result<Vec<f64>> {
        if let Some(c) = self.cue_cache.get(key) {
            return Ok(c.clone());
        }
        let c = self.cues.cue(enrollment)?;
        self.cue_cache.insert(key.to_string(), c.clone());
        Ok(c)
    }

    fn step_on(&mut self, ex: &TseExample) -> Result<f64> {
        let cue = self.cue_for(&ex.enrollment_id, &ex.enrollment)?;
        let mut tape = Tape::new();
        let p = self.model.params().bind(&mut tape, true);
        let f = self.model.forward(&mut tape, &p, ex.mixture.samples(), Some(&cue))?;
        let loss = si_sdr_loss(&mut tape, ex.target.samples(), f.estimate)?;
        let value = tape.value(loss)?.item()?;
        if !value.is_finite() {
            return Err(TseError::Numerical(format!("non-finite loss on {}", ex.id)));
        }
        tape.backward(loss)?;
        let grads = p.grads(&tape)?;
        let names: Vec<String> = self.model.params().iter().map(|(n, _)| n.to_string()).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let lr = self.state.schedule.lr;
        adam_step(self.model.params_mut().tensors_mut(), &grads, &names, &mut self.adam, lr, self.cfg.grad_clip_norm)?;
        self.state.step += 1;
        Ok(value)
    }

    pub fn evaluate_loss(&mut self, set: &[TseExample]) -> Result<f64> {
        let mut total = 0.0;
        for ex in set {
            let cue = self.cue_for(&ex.enrollment_id, &ex.enrollment)?;
            let est = self.model.extract(&ex.mixture, &cue)?;
            total += si_sdr_loss_value(ex.target.samples(), est.samples())?;
        }
        Ok(total / set.len() as f64)
    }

    /// Runs one epoch: shuffled (or freshly mixed) training items, validation,
    /// schedule update.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let start = Instant::now();
        let epoch = self.state.epoch + 1;
        let items: Vec<TseExample> = if self.cfg.dynamic_mixing {
            let pool = self.data.pool.as_ref().expect("checked in new");
            dynamic_epoch_set(pool, self.cfg.seed, epoch, self.data.train.len(), self.cfg.snr_min, self.cfg.snr_max)?
                .iter()
                .enumerate()
                .map(|(i, m)| TseExample::from_mixture(format!("dm{epoch}_{i}"), m))
                .collect()
        } else {
            let mut order: Vec<usize> = (0..self.data.train.len()).collect();
            order.shuffle(&mut rng_for(self.cfg.seed, stream_id("tse-epoch", epoch as u64)));
            order.into_iter().map(|i| self.data.train[i].clone()).collect()
        };
        let lr = self.state.schedule.lr;
        let mut total = 0.0;
        for ex in &items {
            total += self.step_on(ex)?;
        }
        let valid_loss = self.evaluate_loss(&self.data.valid)?;
        self.state.schedule.step(epoch, valid_loss);
        self.state.epoch = epoch;
        Ok(EpochLog { epoch, train_loss: total / items.len() as f64, valid_loss, lr, wall_s: start.elapsed().as_secs_f64() })
    }

    /// Trains until `max_epochs`. With `out_dir`, writes `train_log.jsonl`,
    /// `last.ckpt` (resumable) every epoch and `best.ckpt` on validation
    /// improvement.
    pub fn train(&mut self, out_dir: Option<&Path>, mut on_epoch: impl FnMut(&EpochLog)) -> Result<Vec<EpochLog>> {
        let mut log = Vec::new();
        if let Some(d) = out_dir {
            std::fs::create_dir_all(d).map_err(|e| TseError::io(d, e))?;
        }
        while self.state.epoch < self.cfg.max_epochs {
            let entry = self.run_epoch()?;
            let improved = self.state.best_valid_loss.is_none_or(|b| entry.valid_loss < b);
            if improved {
                self.state.best_valid_loss = Some(entry.valid_loss);
            }
            if let Some(d) = out_dir {
                if improved {
                    self.model.save(&d.join("best.ckpt"))?;
                }
                self.save_resume(&d.join("last.ckpt"))?;
                let line = serde_json::to_string(&entry).expect("log serializes") + "\n";
                use std::io::Write;
                let p = d.join("train_log.jsonl");
                let mut f = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&p)
                    .map_err(|e| TseError::io(&p, e))?;
                f.write_all(line.as_bytes()).map_err(|e| TseError::io(&p, e))?;
            }
            on_epoch(&entry);
            log.push(entry);
        }
        Ok(log)
    }

    pub fn resume_bytes(&self) -> Vec<u8> {
        let header = ResumeHeader {
            version: CHECKPOINT_VERSION,
            config: self.model.config().clone(),
            training: ResumeTraining { train_config: self.cfg.clone(), train_state: self.state.clone(), adam_step: self.adam.step },
        };
        let header = serde_json::to_string(&header).expect("resume header serializes");
        let names: Vec<String> = self.model.params().iter().map(|(n, _)| n.to_string()).collect();
        let m_names: Vec<String> = names.iter().map(|n| format!("{OPTIMIZER_BLOB_PREFIX}m.{n}")).collect();
        let v_names: Vec<String> = names.iter().map(|n| format!("{OPTIMIZER_BLOB_PREFIX}v.{n}")).collect();
        let blobs = self
            .model
            .params()
            .iter()
            .chain(m_names.iter().map(String::as_str).zip(&self.adam.m))
            .chain(v_names.iter().map(String::as_str).zip(&self.adam.v));
        checkpoint::encode(SEPARATOR_MAGIC, &header, blobs)
    }

    pub fn save_resume(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.resume_bytes()).map_err(|e| TseError::io(path, e))
    }

    /// Training configuration stored in a resume checkpoint.
    pub fn resume_config(bytes: &[u8], origin: &str) -> Result<TrainConfig> {
        let c = checkpoint::decode(bytes, SEPARATOR_MAGIC, origin)?;
        let h: ResumeHeader = serde_json::from_str(&c.header).map_err(|e| TseError::format(origin, "header", e.to_string()))?;
        Ok(h.training.train_config)
    }

    /// Restores model, optimizer and schedule state written by
    /// [`save_resume`](Self::save_resume).
    pub fn resume(bytes: &[u8], origin: &str, data: &'a TrainData, cues: &'a dyn CueSource) -> Result<Self> {
        let c = checkpoint::decode(bytes, SEPARATOR_MAGIC, origin)?;
        let h: ResumeHeader = serde_json::from_str(&c.header).map_err(|e| TseError::format(origin, "header", e.to_string()))?;
        if h.version != CHECKPOINT_VERSION {
            return Err(TseError::format(origin, "version", format!("unsupported checkpoint version {}", h.version)));
        }
        let mut model = SeparatorModel::new(h.config, 0)?;
        let n = model.params().len();
        if c.blobs.len() != 3 * n {
            return Err(TseError::format(origin, "blobs", format!("expected {} blobs, found {}", 3 * n, c.blobs.len())));
        }
        let mut blobs = c.blobs;
        let v: Vec<Tensor> = blobs.split_off(2 * n).into_iter().map(|(_, t)| t).collect();
        let m: Vec<Tensor> = blobs.split_off(n).into_iter().map(|(_, t)| t).collect();
        model.params_mut().load_from(blobs)?;
        let tr = h.training;
        let mut t = Trainer::new(model, tr.train_config, data, cues)?;
        t.adam = AdamState { step: tr.adam_step, m, v };
        t.state = tr.train_state;
        Ok(t)
    }
}

/// Per-utterance SI-SDR / SDR and improvements of `model` on `set`.
pub fn evaluate(model: &SeparatorModel, set: &[TseExample], cues: &dyn CueSource) -> Result<ExtractionReport> {
    let mut report = ExtractionReport::default();
    for ex in set {
        let cue = cues.cue(&ex.enrollment)?;
        let est = model.extract(&ex.mixture, &cue)?;
        report.push(UtteranceMetrics::compute(&ex.id, ex.target.samples(), est.samples(), ex.mixture.samples())?);
    }
    Ok(report)
}
