//! Corpus records and JSONL serialization.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    BadRecord { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
    Oov,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Oov => "oov",
        };
        f.write_str(s)
    }
}

/// Character range of a slot entity inside the reference text. Texts are
/// ASCII by construction, so char offsets index bytes directly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpan {
    pub start: usize,
    pub end: usize,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    #[serde(rename = "ref")]
    pub reference: String,
    pub asr: String,
    pub slots: Vec<SlotSpan>,
    pub split: Split,
    pub freq_rank: u32,
}

impl Utterance {
    /// Domain tag of the utterance: the first slot's domain.
    pub fn domain(&self) -> Option<&str> {
        self.slots.first().map(|s| s.domain.as_str())
    }

    pub fn slot_text(&self, span: &SlotSpan) -> &str {
        &self.reference[span.start..span.end]
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.reference.is_empty() || self.asr.is_empty() {
            return Err("reference and asr must be non-empty".into());
        }
        for s in &self.slots {
            if s.start >= s.end || s.end > self.reference.len() {
                return Err(format!(
                    "slot {}..{} out of bounds for reference of length {}",
                    s.start,
                    s.end,
                    self.reference.len()
                ));
            }
        }
        Ok(())
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Utterance>, CorpusError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let utt: Utterance = serde_json::from_str(&line).map_err(|e| CorpusError::BadRecord {
            line: i + 1,
            message: e.to_string(),
        })?;
        utt.validate().map_err(|message| CorpusError::BadRecord {
            line: i + 1,
            message,
        })?;
        out.push(utt);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, utterances: &[Utterance]) -> Result<(), CorpusError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for utt in utterances {
        serde_json::to_writer(&mut file, utt).map_err(|e| {
            CorpusError::Io(std::io::Error::new(std::io::ErrorKind::Other, e))
        })?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Utterance {
        Utterance {
            reference: "i stay in bedford".into(),
            asr: "i stay in bedworth".into(),
            slots: vec![SlotSpan {
                start: 10,
                end: 17,
                domain: "street_names".into(),
            }],
            split: Split::Train,
            freq_rank: 3,
        }
    }

    #[test]
    fn jsonl_round_trip_preserves_spans() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let utts = vec![sample()];
        write_jsonl(&path, &utts).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(back, utts);
        assert_eq!(back[0].slot_text(&back[0].slots[0]), "bedford");
    }

    #[test]
    fn json_field_names_match_interface() {
        let json = serde_json::to_string(&sample()).unwrap();
        for key in ["\"ref\"", "\"asr\"", "\"slots\"", "\"start\"", "\"end\"", "\"domain\"", "\"split\"", "\"freq_rank\""] {
            assert!(json.contains(key), "missing {key} in {json}");
        }
        assert!(json.contains("\"train\""));
    }

    #[test]
    fn out_of_bounds_slot_is_rejected() {
        let mut utt = sample();
        utt.slots[0].end = 99;
        assert!(utt.validate().is_err());
    }
}
