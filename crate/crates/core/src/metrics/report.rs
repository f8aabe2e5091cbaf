use std::fmt;
use std::path::Path;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use super::signal::{sdr, sdr_improvement, si_sdr, si_sdr_improvement};
use crate::error::{Result, TseError};

pub const SDR_DEFINITION: &str = "sdr = 10*log10(|s|^2/|s-est|^2), plain energy ratio without BSS-Eval distortion filters";

/// A dB value that may be one of the `+inf` / `-inf` sentinels. Finite values
/// serialize as JSON numbers, sentinels as the strings `"+inf"` / `"-inf"`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Db(pub f64);

impl Serialize for Db {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else if self.0 > 0.0 {
            s.serialize_str("+inf")
        } else if self.0 < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }
}

impl<'de> Deserialize<'de> for Db {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Db;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or one of \"+inf\", \"-inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Db, E> {
                Ok(Db(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Db, E> {
                Ok(Db(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Db, E> {
                Ok(Db(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Db, E> {
                match v {
                    "+inf" => Ok(Db(f64::INFINITY)),
                    "-inf" => Ok(Db(f64::NEG_INFINITY)),
                    "nan" => Ok(Db(f64::NAN)),
                    _ => Err(E::custom(format!("unexpected dB string {v:?}"))),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMetrics {
    pub id: String,
    pub si_sdr_db: Db,
    pub si_sdri_db: Db,
    pub sdr_db: Db,
    pub sdri_db: Db,
}

impl UtteranceMetrics {
    pub fn compute(id: impl Into<String>, reference: &[f64], estimate: &[f64], mixture: &[f64]) -> Result<Self> {
        Ok(UtteranceMetrics {
            id: id.into(),
            si_sdr_db: Db(si_sdr(reference, estimate)?),
            si_sdri_db: Db(si_sdr_improvement(reference, estimate, mixture)?),
            sdr_db: Db(sdr(reference, estimate)?),
            sdri_db: Db(sdr_improvement(reference, estimate, mixture)?),
        })
    }
}

/// Mean over finite values; sentinels are counted, not averaged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSummary {
    pub mean: Option<f64>,
    pub finite: usize,
    pub pos_inf: usize,
    pub neg_inf: usize,
}

impl MeanSummary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut sum, mut finite, mut pos_inf, mut neg_inf) = (0.0, 0, 0, 0);
        for v in values {
            if v.is_finite() {
                sum += v;
                finite += 1;
            } else if v > 0.0 {
                pos_inf += 1;
            } else if v < 0.0 {
                neg_inf += 1;
            }
        }
        MeanSummary { mean: (finite > 0).then(|| sum / finite as f64), finite, pos_inf, neg_inf }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSummary {
    pub utterances: usize,
    pub si_sdr_db: MeanSummary,
    pub si_sdri_db: MeanSummary,
    pub sdr_db: MeanSummary,
    pub sdri_db: MeanSummary,
    pub sdr_definition: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExtractionReport {
    pub rows: Vec<UtteranceMetrics>,
}

impl ExtractionReport {
    pub fn push(&mut self, row: UtteranceMetrics) {
        self.rows.push(row);
    }

    pub fn summary(&self) -> ExtractionSummary {
        let col = |f: fn(&UtteranceMetrics) -> Db| MeanSummary::of(self.rows.iter().map(|r| f(r).0));
        ExtractionSummary {
            utterances: self.rows.len(),
            si_sdr_db: col(|r| r.si_sdr_db),
            si_sdri_db: col(|r| r.si_sdri_db),
            sdr_db: col(|r| r.sdr_db),
            sdri_db: col(|r| r.sdri_db),
            sdr_definition: SDR_DEFINITION.to_string(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).expect("metrics row serializes"));
            out.push('\n');
        }
        out
    }

    /// Writes per-utterance JSON lines to `rows_path` and the summary, with
    /// `config` echoed under `"config"`, to `summary_path`.
    pub fn write(&self, rows_path: &Path, summary_path: &Path, config: serde_json::Value) -> Result<()> {
        std::fs::write(rows_path, self.to_jsonl()).map_err(|e| TseError::io(rows_path, e))?;
        let doc = serde_json::json!({ "summary": self.summary(), "config": config });
        let text = serde_json::to_string_pretty(&doc).expect("summary serializes") + "\n";
        std::fs::write(summary_path, text).map_err(|e| TseError::io(summary_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentinels_round_trip_as_strings() {
        let row = UtteranceMetrics {
            id: "u".into(),
            si_sdr_db: Db(f64::INFINITY),
            si_sdri_db: Db(f64::NEG_INFINITY),
            sdr_db: Db(1.5),
            sdri_db: Db(0.0),
        };
        let s = serde_json::to_string(&row).unwrap();
        assert!(s.contains("\"+inf\"") && s.contains("\"-inf\""), "{s}");
        assert_eq!(serde_json::from_str::<UtteranceMetrics>(&s).unwrap(), row);
    }

    #[test]
    fn means_skip_sentinels() {
        let m = MeanSummary::of([1.0, 3.0, f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY]);
        assert_eq!(m.mean, Some(2.0));
        assert_eq!((m.finite, m.pos_inf, m.neg_inf), (2, 2, 1));
        assert_eq!(MeanSummary::of([f64::INFINITY]).mean, None);
    }

    #[test]
    fn improvement_matches_difference() {
        let s = [0.2, 0.5, -0.3, 0.1, 0.0];
        let m = [0.6, 0.1, -0.2, 0.4, 0.3];
        let e = [0.25, 0.45, -0.35, 0.15, 0.05];
        let r = UtteranceMetrics::compute("x", &s, &e, &m).unwrap();
        let expect = si_sdr(&s, &e).unwrap() - si_sdr(&s, &m).unwrap();
        assert_eq!(r.si_sdri_db.0, expect);
    }
}
