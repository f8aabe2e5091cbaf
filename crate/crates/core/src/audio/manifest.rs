//! JSON-lines manifests for clean corpora and for mixture splits.
//!
//! Mixture manifests hold one object per line with exactly the keys
//! `mix`, `target`, `enroll`, `speaker`, `snr_db`; paths are relative to the
//! manifest's directory.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mix::{Utterance, UtterancePool};
use super::wav::read_wav;
use super::Waveform;
use crate::error::{Result, TseError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Valid => "valid.jsonl",
            Split::Test => "test.jsonl",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = TseError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(TseError::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub mix: String,
    pub target: String,
    pub enroll: String,
    pub speaker: String,
    pub snr_db: f64,
}

#[derive(Clone, Debug)]
pub struct Manifest {
    pub split: Split,
    pub dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

pub struct LoadedEntry {
    pub entry: ManifestEntry,
    pub mixture: Waveform,
    pub target: Waveform,
    pub enrollment: Waveform,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| TseError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TseError::format(path.display().to_string(), format!("line {}", i + 1), e.to_string()))
        })
        .collect()
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("serializable row"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| TseError::io(path, e))
}

impl Manifest {
    pub fn new(split: Split, dir: impl Into<PathBuf>) -> Self {
        Manifest { split, dir: dir.into(), entries: Vec::new() }
    }

    /// Loads `path` and checks that every referenced file exists.
    pub fn load(path: &Path, split: Split) -> Result<Self> {
        let entries: Vec<ManifestEntry> = read_jsonl(path)?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let m = Manifest { split, dir, entries };
        for e in &m.entries {
            for rel in [&e.mix, &e.target, &e.enroll] {
                let p = m.dir.join(rel);
                if !p.exists() {
                    return Err(TseError::Data(format!("{}: referenced file {} does not exist", path.display(), p.display())));
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.entries)
    }

    pub fn speakers(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.speaker.clone()).collect()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn load_entry(&self, i: usize) -> Result<LoadedEntry> {
        let e = &self.entries[i];
        Ok(LoadedEntry {
            entry: e.clone(),
            mixture: read_wav(&self.resolve(&e.mix))?,
            target: read_wav(&self.resolve(&e.target))?,
            enrollment: read_wav(&self.resolve(&e.enroll))?,
        })
    }

    pub fn load_all(&self) -> Result<Vec<LoadedEntry>> {
        (0..self.entries.len()).map(|i| self.load_entry(i)).collect()
    }
}

/// Train, validation and test manifests of one mixture directory.
#[derive(Clone, Debug)]
pub struct ManifestSet {
    pub train: Manifest,
    pub valid: Manifest,
    pub test: Manifest,
}

impl ManifestSet {
    /// Errors when any test speaker also appears in train or valid.
    pub fn check_disjoint(train: &Manifest, valid: &Manifest, test: &Manifest) -> Result<()> {
        let seen: BTreeSet<String> = train.speakers().union(&valid.speakers()).cloned().collect();
        let overlap: Vec<String> = test.speakers().intersection(&seen).cloned().collect();
        if !overlap.is_empty() {
            return Err(TseError::Data(format!("test speakers overlap train/valid speakers: {}", overlap.join(", "))));
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let train = Manifest::load(&dir.join(Split::Train.file_name()), Split::Train)?;
        let valid = Manifest::load(&dir.join(Split::Valid.file_name()), Split::Valid)?;
        let test = Manifest::load(&dir.join(Split::Test.file_name()), Split::Test)?;
        Self::check_disjoint(&train, &valid, &test)?;
        Ok(ManifestSet { train, valid, test })
    }

    pub fn get(&self, split: Split) -> &Manifest {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub path: String,
    pub speaker: String,
    pub utt: String,
}

/// Clean-utterance corpus listing (`corpus.jsonl`).
#[derive(Clone, Debug)]
pub struct CorpusManifest {
    pub dir: PathBuf,
    pub entries: Vec<CorpusEntry>,
}

impl CorpusManifest {
    pub const FILE_NAME: &'static str = "corpus.jsonl";

    /// Accepts either the corpus directory or the manifest file itself.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(Self::FILE_NAME) } else { path.to_path_buf() };
        let entries: Vec<CorpusEntry> = read_jsonl(&file)?;
        let dir = file.parent().unwrap_or(Path::new(".")).to_path_buf();
        for e in &entries {
            if !dir.join(&e.path).exists() {
                return Err(TseError::Data(format!("{}: missing file {}", file.display(), e.path)));
            }
        }
        Ok(CorpusManifest { dir, entries })
    }

    pub fn save(&self) -> Result<()> {
        write_jsonl(&self.dir.join(Self::FILE_NAME), &self.entries)
    }

    /// Speakers in first-appearance order.
    pub fn speakers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.speaker) {
                out.push(e.speaker.clone());
            }
        }
        out
    }

    pub fn load_pool(&self) -> Result<UtterancePool> {
        let mut pool = UtterancePool::new();
        for e in &self.entries {
            let w = read_wav(&self.dir.join(&e.path))?;
            pool.push(&e.speaker, Utterance { id: e.utt.clone(), waveform: w });
        }
        Ok(pool)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(spk: &str) -> ManifestEntry {
        ManifestEntry { mix: "m.wav".into(), target: "t.wav".into(), enroll: "e.wav".into(), speaker: spk.into(), snr_db: 1.0 }
    }

    #[test]
    fn overlapping_test_speakers_rejected() {
        let mut tr = Manifest::new(Split::Train, ".");
        tr.entries.push(entry("a"));
        let mut va = Manifest::new(Split::Valid, ".");
        va.entries.push(entry("b"));
        let mut te = Manifest::new(Split::Test, ".");
        te.entries.push(entry("c"));
        assert!(ManifestSet::check_disjoint(&tr, &va, &te).is_ok());
        te.entries.push(entry("b"));
        let e = ManifestSet::check_disjoint(&tr, &va, &te).unwrap_err().to_string();
        assert!(e.contains('b'));
    }

    #[test]
    fn unknown_keys_rejected() {
        let line = r#"{"mix":"a","target":"b","enroll":"c","speaker":"s","snr_db":1.0,"extra":1}"#;
        assert!(serde_json::from_str::<ManifestEntry>(line).is_err());
        let line = r#"{"mix":"a","target":"b","enroll":"c","speaker":"s","snr_db":1.0}"#;
        assert!(serde_json::from_str::<ManifestEntry>(line).is_ok());
    }

    #[test]
    fn missing_referenced_file_is_an_error() {
        let dir = std::env::temp_dir().join(format!("tse-manifest-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("train.jsonl");
        write_jsonl(&p, &[entry("a")]).unwrap();
        assert!(Manifest::load(&p, Split::Train).is_err());
        fs::remove_dir_all(&dir).ok();
    }
}
