use crate::audio::Waveform;
use crate::embedder::EmbedderModel;
use crate::error::Result;
use crate::lda::LdaTransform;

/// Produces the speaker cue fed to the separator from an enrollment utterance.
pub trait CueSource {
    fn dim(&self) -> usize;
    fn cue(&self, enrollment: &Waveform) -> Result<Vec<f64>>;
    fn describe(&self) -> String;
}

/// Raw embedding `e`.
pub struct EmbeddingCue<'a> {
    pub embedder: &'a EmbedderModel,
}

impl CueSource for EmbeddingCue<'_> {
    fn dim(&self) -> usize {
        self.embedder.config().embed_dim
    }

    fn cue(&self, enrollment: &Waveform) -> Result<Vec<f64>> {
        self.embedder.embed_vector(enrollment)
    }

    fn describe(&self) -> String {
        format!("{} ({}D)", self.embedder.kind(), self.dim())
    }
}

/// LDA-transformed embedding `e'`.
pub struct LdaCue<'a> {
    pub embedder: &'a EmbedderModel,
    pub lda: &'a LdaTransform,
}

impl CueSource for LdaCue<'_> {
    fn dim(&self) -> usize {
        self.lda.dim_out
    }

    fn cue(&self, enrollment: &Waveform) -> Result<Vec<f64>> {
        self.lda.transform(&self.embedder.embed_vector(enrollment)?)
    }

    fn describe(&self) -> String {
        format!("{} + lda({})", self.embedder.kind(), self.dim())
    }
}
