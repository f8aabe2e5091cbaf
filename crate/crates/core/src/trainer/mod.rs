//! Optimization: SI-SDR loss, Adam, plateau schedule and the extraction
//! training loop.

mod adam;
mod cue;
mod loss;
mod schedule;
mod tse;

pub use adam::{adam_step, global_norm, AdamState, ADAM_EPS, BETA1, BETA2};
pub use cue::{CueSource, EmbeddingCue, LdaCue};
pub use loss::{si_sdr_loss, si_sdr_loss_value, SI_SDR_LOSS_EPS};
pub use schedule::{PlateauSchedule, IMPROVEMENT_THRESHOLD};
pub use tse::{dynamic_epoch_set, evaluate, EpochLog, TrainConfig, TrainData, TrainState, Trainer, TseExample};
