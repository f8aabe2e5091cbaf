use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::table::{cell, Table};
use super::{usage, Command, CueArg, EvalEmbeddingsArgs, EvalTseArgs, ExtractArgs, FitLdaArgs, GradcheckArgs, MixArgs, SplitSelect, SynthArgs, TrainEmbedderArgs, TrainTseArgs};
use crate::audio::{
    dynamic_mix, read_wav, synth_speaker_utterance, write_wav, CorpusEntry, CorpusManifest, Manifest, ManifestEntry, ManifestSet, Split,
    SyntheticSpeakerProfile, UtterancePool,
};
use crate::config::RunConfig;
use crate::embedder::{read_archive, train_embedder, write_archive, write_jsonl_mirror, ArchiveRecord, EmbedderModel, EmbeddingKind};
use crate::error::{Result, TseError};
use crate::gradcheck::{run_gradcheck, selftest, GradCheckConfig};
use crate::lda::{fit_lda, LabeledEmbeddingSet, LdaTransform};
use crate::metrics::{eer, min_dcf, sampled_trials, ExtractionReport, UtteranceMetrics};
use crate::rng::{derive_seed, rng_for, stream_id};
use crate::separator::SeparatorModel;
use crate::trainer::{CueSource, EmbeddingCue, LdaCue, Trainer, TrainData, TseExample};

pub(super) fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a, out),
        Command::Mix(a) => mix(a, out),
        Command::TrainEmbedder(a) => train_embedder_cmd(a, out),
        Command::ExtractEmbeddings(a) => extract(a, out),
        Command::EvalEmbeddings(a) => eval_embeddings(a, out),
        Command::FitLda(a) => fit_lda_cmd(a, out),
        Command::TrainTse(a) => train_tse(a, out),
        Command::EvalTse(a) => eval_tse(a, out),
        Command::Gradcheck(a) => gradcheck_cmd(a, false, out),
        Command::Selftest(a) => gradcheck_cmd(a, true, out),
        Command::Config(a) => {
            let c = a.common.resolve()?;
            c.validate()?;
            emit(out, &c.to_toml())
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| TseError::io("<stdout>", e))
}

fn header(command: &str, cfg: &RunConfig) -> Value {
    json!({
        "tool": "tse",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": cfg.seed,
        "config": cfg.to_json(),
    })
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes") + "\n";
    fs::write(path, text).map_err(|e| TseError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| TseError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| TseError::format(path.display().to_string(), "json", e.to_string()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| TseError::io(dir, e))
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    if let Some(v) = a.speakers {
        cfg.synth.speakers = v;
    }
    if let Some(v) = a.utts {
        cfg.synth.utts = v;
    }
    if let Some(v) = a.dur {
        cfg.synth.dur_s = v;
    }
    cfg.validate()?;
    let s = &cfg.synth;
    let width = (s.speakers.max(2) - 1).to_string().len().max(2);
    let mut manifest = CorpusManifest { dir: a.out.clone(), entries: Vec::new() };
    let mut profiles = Vec::new();
    for spk in 0..s.speakers {
        let id = format!("spk{spk:0width$}");
        let profile = SyntheticSpeakerProfile::random(derive_seed(cfg.seed, stream_id("speaker", spk as u64)));
        let dir = a.out.join("wav").join(&id);
        create_dir(&dir)?;
        for u in 0..s.utts {
            let utt = format!("{id}_u{u:03}");
            let w = synth_speaker_utterance(&profile, s.dur_s, u as u64, cfg.sample_rate)?;
            write_wav(&dir.join(format!("{utt}.wav")), &w)?;
            manifest.entries.push(CorpusEntry { path: format!("wav/{id}/{utt}.wav"), speaker: id.clone(), utt });
        }
        profiles.push(json!({ "speaker": id, "profile": profile }));
    }
    manifest.save()?;
    let mut report = header("synth", &cfg);
    report["speakers"] = Value::Array(profiles);
    write_json(&a.out.join("synth.json"), &report)?;
    emit(out, &format!("wrote {} utterances of {} speakers to {}\n", manifest.entries.len(), s.speakers, a.out.display()))
}

#[derive(Serialize, Deserialize)]
struct SplitsFile {
    train: Vec<String>,
    valid: Vec<String>,
    test: Vec<String>,
}

impl SplitsFile {
    const FILE_NAME: &'static str = "splits.json";

    fn check_disjoint(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for s in self.train.iter().chain(&self.valid).chain(&self.test) {
            if !seen.insert(s) {
                return Err(TseError::Data(format!("speaker {s} appears in more than one split")));
            }
        }
        Ok(())
    }

    fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

fn mix(a: MixArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    if let Some(v) = a.snr_min {
        cfg.mix.snr_min = v;
    }
    if let Some(v) = a.snr_max {
        cfg.mix.snr_max = v;
    }
    if let Some(v) = a.split_ratios {
        cfg.mix.split_ratios = v.try_into().map_err(|_| usage("--split-ratios takes three values train,valid,test"))?;
    }
    if let Some(v) = a.mixtures {
        cfg.mix.mixtures = v.try_into().map_err(|_| usage("--mixtures takes three counts train,valid,test"))?;
    }
    cfg.validate()?;
    let corpus = CorpusManifest::load(&a.corpus)?;
    let pool = corpus.load_pool()?;
    let mut speakers = corpus.speakers();
    {
        use rand::seq::SliceRandom;
        speakers.shuffle(&mut rng_for(cfg.seed, stream_id("speaker-split", 0)));
    }
    let n = speakers.len();
    let r = cfg.mix.split_ratios;
    let n_test = (r[2] * n as f64).round() as usize;
    let n_valid = ((r[1] * n as f64).round() as usize).min(n - n_test.min(n));
    let n_train = n.saturating_sub(n_test + n_valid);
    let parts = [
        speakers[..n_train].to_vec(),
        speakers[n_train..n_train + n_valid].to_vec(),
        speakers[n_train + n_valid..].to_vec(),
    ];
    for (i, split) in Split::ALL.iter().enumerate() {
        if cfg.mix.mixtures[i] > 0 && parts[i].len() < 2 {
            return Err(TseError::Data(format!(
                "corpus too small: split {split} gets {} of {n} speakers, mixing needs at least 2",
                parts[i].len()
            )));
        }
    }
    create_dir(&a.out)?;
    let mut manifests = Vec::new();
    for (i, split) in Split::ALL.iter().enumerate() {
        let sub: UtterancePool = pool.restricted_to(&parts[i]);
        let dir = a.out.join(split.to_string());
        create_dir(&dir)?;
        let mut m = Manifest::new(*split, &a.out);
        for k in 0..cfg.mix.mixtures[i] {
            let mut rng = rng_for(cfg.seed, stream_id(&format!("mix-{split}"), k as u64));
            let ex = dynamic_mix(&sub, &mut rng, cfg.mix.snr_min, cfg.mix.snr_max)?;
            let id = format!("{split}_{k:04}");
            let rel = |kind: &str| format!("{split}/{id}_{kind}.wav");
            write_wav(&a.out.join(rel("mix")), &ex.mixture)?;
            write_wav(&a.out.join(rel("target")), &ex.target)?;
            write_wav(&a.out.join(rel("enroll")), &ex.enrollment)?;
            m.entries.push(ManifestEntry {
                mix: rel("mix"),
                target: rel("target"),
                enroll: rel("enroll"),
                speaker: ex.target_speaker_id.clone(),
                snr_db: ex.snr_db,
            });
        }
        manifests.push(m);
    }
    ManifestSet::check_disjoint(&manifests[0], &manifests[1], &manifests[2])?;
    for m in &manifests {
        m.save(&a.out.join(m.split.file_name()))?;
    }
    let splits = SplitsFile { train: parts[0].clone(), valid: parts[1].clone(), test: parts[2].clone() };
    let mut report = header("mix", &cfg);
    report["corpus"] = json!(a.corpus.display().to_string());
    report["speakers"] = serde_json::to_value(&splits).expect("splits serialize");
    write_json(&a.out.join(SplitsFile::FILE_NAME), &serde_json::to_value(&splits).expect("splits serialize"))?;
    write_json(&a.out.join("mix.json"), &report)?;
    let counts: Vec<String> = manifests.iter().map(|m| format!("{} {}", m.entries.len(), m.split)).collect();
    emit(out, &format!("wrote {} mixtures to {}\n", counts.join(", "), a.out.display()))
}

/// Corpus pool restricted to the selected split's speakers, plus the
/// corresponding manifest entries.
fn select_corpus(corpus: &Path, select: &SplitSelect) -> Result<(CorpusManifest, String)> {
    let mut c = CorpusManifest::load(corpus)?;
    let Some(path) = &select.splits else {
        return Ok((c, "all".into()));
    };
    let split: Split = select.split.parse()?;
    let splits: SplitsFile = read_json(path)?;
    splits.check_disjoint()?;
    let keep = splits.get(split);
    c.entries.retain(|e| keep.contains(&e.speaker));
    if c.entries.is_empty() {
        return Err(TseError::Data(format!("no corpus utterances for split {split}")));
    }
    Ok((c, split.to_string()))
}

fn train_embedder_cmd(a: TrainEmbedderArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    if let Some(p) = a.pooling {
        cfg.embedder.pooling = p;
    }
    if let Some(v) = a.epochs {
        cfg.embedder.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.embedder.lr = v;
    }
    cfg.validate()?;
    let (corpus, split) = select_corpus(&a.corpus, &a.select)?;
    let pool = corpus.load_pool()?;
    let trained = train_embedder(&pool, cfg.embedder.model_config(cfg.sample_rate), &cfg.embedder.train_config(cfg.seed))?;
    create_dir(&a.out)?;
    trained.model.save(&a.out.join("embedder.bin"))?;
    crate::audio::write_jsonl(&a.out.join("train_log.jsonl"), &trained.log)?;
    let mut report = header("train-embedder", &cfg);
    report["split"] = json!(split);
    report["embedding"] = json!(trained.model.kind().to_string());
    report["speakers"] = json!(trained.model.speakers());
    report["log"] = serde_json::to_value(&trained.log).expect("log serializes");
    write_json(&a.out.join("run.json"), &report)?;
    let last = trained.log.last();
    emit(
        out,
        &format!(
            "{} embedder on {} speakers: train accuracy {}, valid accuracy {}\n",
            trained.model.kind(),
            pool.num_speakers(),
            cell(last.map(|e| e.train_accuracy), 3),
            cell(last.and_then(|e| e.valid_accuracy), 3),
        ),
    )
}

#[derive(Serialize, Deserialize)]
struct ArchiveMeta {
    embedding: String,
    dimension: usize,
    records: usize,
    split: String,
}

fn meta_path(archive: &Path) -> PathBuf {
    archive.with_extension("meta.json")
}

fn extract(a: ExtractArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.common.resolve()?;
    cfg.validate()?;
    let model = EmbedderModel::load(&a.model)?;
    let (corpus, split) = select_corpus(&a.corpus, &a.select)?;
    let records: Vec<ArchiveRecord> = corpus
        .entries
        .par_iter()
        .map(|e| {
            let w = read_wav(&corpus.dir.join(&e.path))?;
            Ok(ArchiveRecord { speaker: e.speaker.clone(), vector: model.embed_vector(&w)? })
        })
        .collect::<Result<_>>()?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_archive(&a.out, &records)?;
    let utts: Vec<String> = corpus.entries.iter().map(|e| e.utt.clone()).collect();
    write_jsonl_mirror(&a.out.with_extension("jsonl"), &records, Some(&utts))?;
    let meta = ArchiveMeta { embedding: model.kind().to_string(), dimension: model.config().embed_dim, records: records.len(), split };
    let mut doc = header("extract-embeddings", &cfg);
    doc["archive"] = serde_json::to_value(&meta).expect("meta serializes");
    write_json(&meta_path(&a.out), &doc)?;
    emit(out, &format!("wrote {} {} embeddings to {}\n", records.len(), meta.embedding, a.out.display()))
}

fn archive_label(path: &Path) -> (String, Option<usize>) {
    match read_json::<Value>(&meta_path(path)) {
        Ok(v) => (
            v["archive"]["embedding"].as_str().unwrap_or("?").to_string(),
            v["archive"]["dimension"].as_u64().map(|d| d as usize),
        ),
        Err(_) => (path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(), None),
    }
}

#[derive(Serialize)]
struct VerificationRow {
    embedding: String,
    dimension: usize,
    eer_percent: f64,
    min_dcf: f64,
    target_trials: usize,
    nontarget_trials: usize,
}

fn verification_row(name: String, items: &[(String, Vec<f64>)], per_speaker: usize, cfg: &RunConfig, stream: u64) -> Result<VerificationRow> {
    let mut rng = rng_for(cfg.seed, stream_id("trials", stream));
    let trials = sampled_trials(items, per_speaker, &mut rng)?;
    let (pos, neg) = trials.counts();
    Ok(VerificationRow {
        embedding: name,
        dimension: items.first().map_or(0, |i| i.1.len()),
        eer_percent: 100.0 * eer(&trials),
        min_dcf: min_dcf(&trials, cfg.verification.dcf())?,
        target_trials: pos,
        nontarget_trials: neg,
    })
}

fn eval_embeddings(a: EvalEmbeddingsArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    if let Some(v) = a.trials_per_speaker {
        cfg.verification.trials_per_speaker = v;
    }
    a.dcf.apply(&mut cfg);
    cfg.validate()?;
    let mut rows = Vec::new();
    for (i, path) in a.archive.iter().enumerate() {
        let records = read_archive(path)?;
        let items: Vec<(String, Vec<f64>)> = records.into_iter().map(|r| (r.speaker, r.vector)).collect();
        let (name, _) = archive_label(path);
        rows.push(verification_row(name, &items, cfg.verification.trials_per_speaker, &cfg, i as u64)?);
    }
    let mut t = Table::new(["speaker embedding", "dimension", "EER(%)", "minDCF"]);
    for r in &rows {
        t.row([r.embedding.clone(), r.dimension.to_string(), cell(Some(r.eer_percent), 2), cell(Some(r.min_dcf), 3)]);
    }
    create_dir(&a.out)?;
    let mut report = header("eval-embeddings", &cfg);
    report["archives"] = json!(a.archive.iter().map(|p| p.display().to_string()).collect::<Vec<_>>());
    report["rows"] = serde_json::to_value(&rows).expect("rows serialize");
    write_json(&a.out.join("table1.json"), &report)?;
    let text = t.render();
    fs::write(a.out.join("table1.txt"), &text).map_err(|e| TseError::io(a.out.join("table1.txt"), e))?;
    emit(out, &text)
}

fn fit_lda_cmd(a: FitLdaArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    if let Some(d) = a.dims {
        cfg.lda.dims = d;
    }
    if let Some(s) = a.shrinkage {
        cfg.lda.shrinkage = s;
    }
    cfg.validate()?;
    let records = read_archive(&a.archive)?;
    let set = LabeledEmbeddingSet::new(records.into_iter().map(|r| (r.speaker, r.vector)))?;
    let mut fits = Vec::new();
    for &l in &cfg.lda.dims {
        if l >= set.num_classes() {
            return Err(usage(format!("--dims {l} must be below the number of speakers ({})", set.num_classes())));
        }
    }
    create_dir(&a.out)?;
    let mut t = Table::new(["dims", "explained variance"]);
    for &l in &cfg.lda.dims {
        let lda = fit_lda(&set, l, cfg.lda.shrinkage)?;
        lda.save(&a.out.join(format!("lda_{l}.json")))?;
        let total: f64 = lda.explained_variance_ratio.iter().sum();
        t.row([l.to_string(), format!("{:.1}%", 100.0 * total)]);
        fits.push(json!({
            "dims": l,
            "file": format!("lda_{l}.json"),
            "explained_variance_ratio": lda.explained_variance_ratio,
            "explained_variance_total": total,
        }));
    }
    let mut report = header("fit-lda", &cfg);
    report["archive"] = json!(a.archive.display().to_string());
    report["classes"] = json!(set.num_classes());
    report["dim_in"] = json!(set.dim());
    report["fits"] = Value::Array(fits);
    write_json(&a.out.join("lda_report.json"), &report)?;
    emit(out, &t.render())
}

/// Row label of an extraction system, e.g. `xi-LDA-TSE(32D) + DM`.
pub fn system_name(kind: EmbeddingKind, lda_dims: Option<usize>, dynamic_mixing: bool) -> String {
    let base = match kind {
        EmbeddingKind::Xivec => "xi",
        _ => "x",
    };
    let mut name = match lda_dims {
        Some(l) => format!("{base}-LDA-TSE({l}D)"),
        None => format!("{base}-TSE"),
    };
    if dynamic_mixing {
        name.push_str(" + DM");
    }
    name
}

#[derive(Serialize, Deserialize)]
struct SystemFile {
    system: String,
    embedder: String,
    lda: Option<String>,
    mixtures: String,
}

struct LoadedCue {
    embedder: EmbedderModel,
    lda: Option<LdaTransform>,
}

impl LoadedCue {
    fn load(embedder: &Path, lda: Option<&Path>) -> Result<Self> {
        let embedder = EmbedderModel::load(embedder)?;
        let lda = match lda {
            Some(p) => {
                if !p.exists() {
                    return Err(TseError::Data(format!("LDA model {} does not exist", p.display())));
                }
                Some(LdaTransform::load(p)?)
            }
            None => None,
        };
        if let Some(l) = &lda {
            if l.dim_in != embedder.config().embed_dim {
                return Err(usage(format!(
                    "LDA expects {}-dim embeddings, embedder produces {}",
                    l.dim_in,
                    embedder.config().embed_dim
                )));
            }
        }
        Ok(LoadedCue { embedder, lda })
    }

    fn source(&self) -> Box<dyn CueSource + Sync + '_> {
        match &self.lda {
            Some(l) => Box::new(LdaCue { embedder: &self.embedder, lda: l }),
            None => Box::new(EmbeddingCue { embedder: &self.embedder }),
        }
    }
}

fn train_tse(a: TrainTseArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    if let Some(p) = a.preset {
        cfg.separator.preset = p;
    }
    if let Some(v) = a.epochs {
        cfg.train.max_epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr_init = v;
    }
    if a.dynamic_mixing {
        cfg.train.dynamic_mixing = true;
    }
    cfg.validate()?;
    let cue = LoadedCue::load(&a.embedder, a.lda.as_deref())?;
    let kind = cue.embedder.kind();
    if let Some(expected) = a.cue {
        let want = match expected {
            CueArg::Xvec => EmbeddingKind::Xvec,
            CueArg::Xivec => EmbeddingKind::Xivec,
        };
        if want != kind {
            return Err(usage(format!("--cue asks for {want} but the embedder produces {kind}")));
        }
    }
    let set = ManifestSet::load(&a.mixtures)?;
    create_dir(&a.out)?;
    let last = a.out.join("last.ckpt");
    let log_path = a.out.join("train_log.jsonl");
    let resume_bytes = if a.resume && last.exists() {
        let bytes = fs::read(&last).map_err(|e| TseError::io(&last, e))?;
        cfg.train.dynamic_mixing = Trainer::resume_config(&bytes, &last.display().to_string())?.dynamic_mixing;
        Some(bytes)
    } else {
        None
    };
    let pool = if cfg.train.dynamic_mixing {
        let corpus = a.corpus.as_ref().ok_or_else(|| usage("--dynamic-mixing needs --corpus"))?;
        let select = SplitSelect { splits: Some(a.mixtures.join(SplitsFile::FILE_NAME)), split: "train".into() };
        Some(select_corpus(corpus, &select)?.0.load_pool()?)
    } else {
        None
    };
    let data = TrainData { train: TseExample::from_manifest(&set.train)?, valid: TseExample::from_manifest(&set.valid)?, pool };
    let source = cue.source();
    let system = system_name(kind, cue.lda.as_ref().map(|l| l.dim_out), cfg.train.dynamic_mixing);
    let mut trainer = if let Some(bytes) = resume_bytes {
        let mut t = Trainer::resume(&bytes, &last.display().to_string(), &data, source.as_ref())?;
        t.set_max_epochs(cfg.train.max_epochs);
        t
    } else {
        if log_path.exists() {
            fs::remove_file(&log_path).map_err(|e| TseError::io(&log_path, e))?;
        }
        let model = SeparatorModel::new(cfg.separator.model_config(source.dim()), derive_seed(cfg.seed, stream_id("separator", 0)))?;
        Trainer::new(model, cfg.train_config(), &data, source.as_ref())?
    };
    let sys = SystemFile {
        system: system.clone(),
        embedder: a.embedder.display().to_string(),
        lda: a.lda.as_ref().map(|p| p.display().to_string()),
        mixtures: a.mixtures.display().to_string(),
    };
    let mut report = header("train-tse", &cfg);
    report["system"] = serde_json::to_value(&sys).expect("system serializes");
    report["separator"] = serde_json::to_value(trainer.model().config()).expect("config serializes");
    write_json(&a.out.join("run.json"), &report)?;
    let mut lines = Vec::new();
    let log = trainer.train(Some(&a.out), |e| {
        lines.push(format!("epoch {:>3}  train {:>8.3}  valid {:>8.3}  lr {:.3e}\n", e.epoch, e.train_loss, e.valid_loss, e.lr));
    })?;
    for l in lines {
        emit(out, &l)?;
    }
    let best = trainer.state().best_valid_loss;
    emit(out, &format!("{system}: {} epochs, best valid loss {}\n", log.len(), cell(best, 3)))
}

#[derive(Serialize)]
struct SystemRow {
    system: String,
    sdri_db: Option<f64>,
    si_sdri_db: Option<f64>,
    min_dcf: Option<f64>,
    eer_percent: Option<f64>,
    summary: crate::metrics::ExtractionSummary,
}

fn slug(name: &str) -> String {
    let mapped: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
    mapped.split('_').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("_")
}

fn eval_tse(a: EvalTseArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = a.common.resolve()?;
    if let Some(v) = a.trials_per_speaker {
        cfg.verification.trials_per_speaker = v;
    }
    a.dcf.apply(&mut cfg);
    cfg.validate()?;
    let split: Split = a.split.parse()?;
    let set = ManifestSet::load(&a.mixtures)?;
    let examples = TseExample::from_manifest(set.get(split))?;
    if examples.is_empty() {
        return Err(TseError::Data(format!("split {split} has no mixtures")));
    }
    create_dir(&a.out)?;

    let mut identity = ExtractionReport::default();
    for ex in &examples {
        identity.push(UtteranceMetrics::compute(&ex.id, ex.target.samples(), ex.mixture.samples(), ex.mixture.samples())?);
    }
    let mut rows = vec![SystemRow {
        system: "mixture".into(),
        sdri_db: identity.summary().sdri_db.mean,
        si_sdri_db: identity.summary().si_sdri_db.mean,
        min_dcf: None,
        eer_percent: None,
        summary: identity.summary(),
    }];

    for (si, dir) in a.system.iter().enumerate() {
        let run: Value = read_json(&dir.join("run.json"))?;
        let sys: SystemFile = serde_json::from_value(run["system"].clone())
            .map_err(|e| TseError::format(dir.join("run.json").display().to_string(), "system", e.to_string()))?;
        let cue = LoadedCue::load(Path::new(&sys.embedder), sys.lda.as_deref().map(Path::new))?;
        let source = cue.source();
        let model = SeparatorModel::load(&dir.join("best.ckpt"))?;
        if model.config().cue_dim != source.dim() {
            return Err(usage(format!(
                "{}: separator expects {}-dim cues, cue source gives {}",
                sys.system,
                model.config().cue_dim,
                source.dim()
            )));
        }
        let outputs: Vec<(UtteranceMetrics, crate::audio::Waveform)> = examples
            .par_iter()
            .map(|ex| {
                let c = source.cue(&ex.enrollment)?;
                let est = model.extract(&ex.mixture, &c)?;
                let m = UtteranceMetrics::compute(&ex.id, ex.target.samples(), est.samples(), ex.mixture.samples())?;
                Ok((m, est))
            })
            .collect::<Result<_>>()?;
        let mut report = ExtractionReport::default();
        let tag = slug(&sys.system);
        if a.write_wavs {
            create_dir(&a.out.join("wavs").join(&tag))?;
        }
        for (m, est) in outputs {
            if a.write_wavs {
                write_wav(&a.out.join("wavs").join(&tag).join(format!("{}.wav", m.id)), &est)?;
            }
            report.push(m);
        }
        fs::write(a.out.join(format!("{tag}.jsonl")), report.to_jsonl()).map_err(|e| TseError::io(a.out.join(&tag), e))?;

        let mut seen = BTreeMap::new();
        for ex in &examples {
            seen.entry(ex.enrollment_id.clone()).or_insert((ex.speaker.clone(), &ex.enrollment));
        }
        let items: Vec<(String, Vec<f64>)> = seen.into_values().map(|(s, w)| Ok((s, source.cue(w)?))).collect::<Result<_>>()?;
        let verification = verification_row(sys.system.clone(), &items, cfg.verification.trials_per_speaker, &cfg, 1000 + si as u64).ok();
        let summary = report.summary();
        rows.push(SystemRow {
            system: sys.system.clone(),
            sdri_db: summary.sdri_db.mean,
            si_sdri_db: summary.si_sdri_db.mean,
            min_dcf: verification.as_ref().map(|v| v.min_dcf),
            eer_percent: verification.as_ref().map(|v| v.eer_percent),
            summary,
        });
    }

    let mut t2 = Table::new(["System", "SI-SDRi(dB)", "minDCF", "EER(%)"]);
    for r in rows.iter().skip(1) {
        t2.row([r.system.clone(), cell(r.si_sdri_db, 2), cell(r.min_dcf, 3), cell(r.eer_percent, 2)]);
    }
    let mut t3 = Table::new(["TSE System", "SDRi(dB)", "SI-SDRi(dB)"]);
    for r in &rows {
        t3.row([r.system.clone(), cell(r.sdri_db, 3), cell(r.si_sdri_db, 3)]);
    }
    let mut report = header("eval-tse", &cfg);
    report["split"] = json!(split.to_string());
    report["systems"] = json!(a.system.iter().map(|p| p.display().to_string()).collect::<Vec<_>>());
    report["rows"] = serde_json::to_value(&rows).expect("rows serialize");
    write_json(&a.out.join("eval.json"), &report)?;
    let text = format!("{}\n{}", t2.render(), t3.render());
    fs::write(a.out.join("tables.txt"), &text).map_err(|e| TseError::io(a.out.join("tables.txt"), e))?;
    emit(out, &text)
}

fn gradcheck_cmd(a: GradcheckArgs, with_invariants: bool, out: &mut dyn Write) -> Result<()> {
    let cfg = a.common.resolve()?;
    let gc = GradCheckConfig { instances: a.instances, seed: cfg.seed, inject_fault: a.inject_fault, filter: a.filter, ..Default::default() };
    if gc.instances == 0 {
        return Err(usage("--instances must be positive"));
    }
    let mut t = Table::new(["op", "instances", "max rel. error", "status"]);
    let (value, passed, failing) = if with_invariants {
        let r = selftest(&gc);
        for o in &r.gradcheck.ops {
            t.row([o.op.clone(), o.instances.to_string(), format!("{:.2e}", o.max_rel_error), status(o.passed)]);
        }
        for c in &r.invariants {
            t.row([c.name.clone(), "-".into(), c.detail.clone(), status(c.passed)]);
        }
        let mut failing: Vec<String> = r.gradcheck.failing().iter().map(|s| s.to_string()).collect();
        failing.extend(r.invariants.iter().filter(|c| !c.passed).map(|c| c.name.clone()));
        (serde_json::to_value(&r).expect("report serializes"), r.passed(), failing)
    } else {
        let r = run_gradcheck(&gc);
        for o in &r.ops {
            t.row([o.op.clone(), o.instances.to_string(), format!("{:.2e}", o.max_rel_error), status(o.passed)]);
        }
        let failing = r.failing().iter().map(|s| s.to_string()).collect();
        (serde_json::to_value(&r).expect("report serializes"), r.passed(), failing)
    };
    if let Some(path) = &a.out {
        let mut doc = header(if with_invariants { "selftest" } else { "gradcheck" }, &cfg);
        doc["report"] = value;
        write_json(path, &doc)?;
    }
    emit(out, &t.render())?;
    if !passed {
        return Err(TseError::Numerical(format!("failing: {}", failing.join(", "))));
    }
    Ok(())
}

fn status(ok: bool) -> String {
    if ok { "ok" } else { "FAIL" }.to_string()
}
