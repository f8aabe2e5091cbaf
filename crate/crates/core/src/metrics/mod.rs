//! Signal-reconstruction and speaker-verification metrics.

mod report;
mod signal;
mod verification;

pub use report::{Db, ExtractionReport, ExtractionSummary, MeanSummary, UtteranceMetrics, SDR_DEFINITION};
pub use signal::{sdr, sdr_improvement, si_sdr, si_sdr_improvement, si_sdr_with};
pub use verification::{cosine_similarity, cosine_trials, eer, min_dcf, roc_points, sampled_trials, DcfParams, TrialScores};
