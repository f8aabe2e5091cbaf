//! Binary embedding archive.
//!
//! ```text
//! magic "TSEEMB01", u32 count, u32 dim,
//! per record: u16 id_len, id (UTF-8), dim × f32      (little-endian)
//! ```

use std::path::Path;

use serde::Serialize;

use crate::error::{Result, TseError};

pub const ARCHIVE_MAGIC: &[u8; 8] = b"TSEEMB01";

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveRecord {
    pub speaker: String,
    pub vector: Vec<f64>,
}

pub fn encode_archive(records: &[ArchiveRecord]) -> Result<Vec<u8>> {
    let dim = records.first().map_or(0, |r| r.vector.len());
    let mut out = Vec::new();
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for r in records {
        if r.vector.len() != dim {
            return Err(TseError::shape("embedding archive", format!("record {} has dim {}, archive dim {dim}", r.speaker, r.vector.len())));
        }
        let id = r.speaker.as_bytes();
        if id.len() > u16::MAX as usize {
            return Err(TseError::InvalidArgument("speaker id longer than 65535 bytes".into()));
        }
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id);
        for &v in &r.vector {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_archive(bytes: &[u8], origin: &str) -> Result<Vec<ArchiveRecord>> {
    let mut pos = 0usize;
    let mut take = |n: usize, field: &str| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(TseError::format(origin, field.to_string(), "truncated"));
        }
        pos += n;
        Ok(&bytes[pos - n..pos])
    };
    if take(8, "magic")? != ARCHIVE_MAGIC {
        return Err(TseError::format(origin, "magic", "not an embedding archive"));
    }
    let count = u32::from_le_bytes(take(4, "count")?.try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(take(4, "dim")?.try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let len = u16::from_le_bytes(take(2, "id_len")?.try_into().unwrap()) as usize;
        let speaker = String::from_utf8(take(len, "id")?.to_vec())
            .map_err(|_| TseError::format(origin, format!("record {i} id"), "invalid UTF-8"))?;
        let vector = take(dim * 4, "values")?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        out.push(ArchiveRecord { speaker, vector });
    }
    if pos != bytes.len() {
        return Err(TseError::format(origin, "trailer", format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(out)
}

pub fn write_archive(path: &Path, records: &[ArchiveRecord]) -> Result<()> {
    std::fs::write(path, encode_archive(records)?).map_err(|e| TseError::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<Vec<ArchiveRecord>> {
    let bytes = std::fs::read(path).map_err(|e| TseError::io(path, e))?;
    decode_archive(&bytes, &path.display().to_string())
}

#[derive(Serialize)]
struct MirrorLine<'a> {
    index: usize,
    utt: Option<&'a str>,
    speaker: &'a str,
    vector: Vec<f64>,
}

/// Debug mirror: one JSON object per record, values rounded to f32 as in the archive.
pub fn write_jsonl_mirror(path: &Path, records: &[ArchiveRecord], utts: Option<&[String]>) -> Result<()> {
    let mut text = String::new();
    for (i, r) in records.iter().enumerate() {
        let line = MirrorLine {
            index: i,
            utt: utts.and_then(|u| u.get(i)).map(String::as_str),
            speaker: &r.speaker,
            vector: r.vector.iter().map(|&v| v as f32 as f64).collect(),
        };
        text.push_str(&serde_json::to_string(&line).expect("mirror line serializes"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| TseError::io(path, e))
}
