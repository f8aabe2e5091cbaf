//! Published full-scale results on WSJ0-2mix.
//!
//! These numbers come from 101-speaker training with 512-dim embeddings and
//! GPU-scale separator training. The desk presets here cannot reach them;
//! they are kept as the targets that the desk-scale property suite stands in
//! for, and as labels for report comparisons.

/// Speaker-verification quality of an embedding extractor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbeddingResult {
    pub embedding: &'static str,
    pub dimension: usize,
    pub eer_percent: f64,
    pub min_dcf: f64,
}

/// Extraction quality of a system together with its cue's verification scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemResult {
    pub system: &'static str,
    pub si_sdri_db: f64,
    pub pesq: f64,
    pub min_dcf: f64,
    pub eer_percent: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtractionResult {
    pub system: &'static str,
    pub sdri_db: f64,
    pub si_sdri_db: f64,
    pub pesq: f64,
}

pub const EMBEDDING_RESULTS: [EmbeddingResult; 2] = [
    EmbeddingResult { embedding: "x-vector", dimension: 512, eer_percent: 3.58, min_dcf: 0.364 },
    EmbeddingResult { embedding: "xi-vector", dimension: 512, eer_percent: 3.31, min_dcf: 0.370 },
];

/// The first row is the x-TSE baseline.
pub const SYSTEM_RESULTS: [SystemResult; 6] = [
    SystemResult { system: "x-TSE", si_sdri_db: 17.1, pesq: 3.59, min_dcf: 0.36, eer_percent: 3.58 },
    SystemResult { system: "x-LDA-TSE(64D)", si_sdri_db: 18.5, pesq: 3.70, min_dcf: 0.39, eer_percent: 2.94 },
    SystemResult { system: "x-LDA-TSE(32D)", si_sdri_db: 17.9, pesq: 3.67, min_dcf: 0.32, eer_percent: 2.50 },
    SystemResult { system: "xi-TSE", si_sdri_db: 18.0, pesq: 3.65, min_dcf: 0.37, eer_percent: 3.31 },
    SystemResult { system: "xi-LDA-TSE(64D)", si_sdri_db: 18.2, pesq: 3.67, min_dcf: 0.43, eer_percent: 2.75 },
    SystemResult { system: "xi-LDA-TSE(32D)", si_sdri_db: 18.8, pesq: 3.71, min_dcf: 0.45, eer_percent: 2.78 },
];

/// The first row scores the unprocessed mixture against itself.
pub const EXTRACTION_RESULTS: [ExtractionResult; 5] = [
    ExtractionResult { system: "mixture", sdri_db: 0.0, si_sdri_db: -0.001, pesq: 2.01 },
    ExtractionResult { system: "xi-TSE", sdri_db: 18.6, si_sdri_db: 18.0, pesq: 3.65 },
    ExtractionResult { system: "xi-LDA-TSE(32D)", sdri_db: 19.2, si_sdri_db: 18.8, pesq: 3.71 },
    ExtractionResult { system: "xi-TSE + DM", sdri_db: 19.7, si_sdri_db: 19.1, pesq: 3.75 },
    ExtractionResult { system: "xi-LDA-TSE(32D) + DM", sdri_db: 19.9, si_sdri_db: 19.4, pesq: 3.78 },
];

/// Share of total LDA variance kept by the 32-dim xi-vector cue.
pub const LDA_32D_EXPLAINED_VARIANCE: f64 = 0.82;

/// Best relative SI-SDRi gain over the baseline without dynamic mixing.
pub const MAX_RELATIVE_SI_SDRI_GAIN: f64 = 0.099;

/// Relative SI-SDRi gain of each system over the baseline.
pub fn relative_gains() -> Vec<(&'static str, f64)> {
    let base = SYSTEM_RESULTS[0].si_sdri_db;
    SYSTEM_RESULTS.iter().map(|r| (r.system, (r.si_sdri_db - base) / base)).collect()
}
