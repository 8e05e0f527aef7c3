//! Cassette recording and replay.
//!
//! A cassette is a line-per-record file of `{digest, response}` objects.
//! Records may also carry per-section digests of the request so a replay
//! mismatch can name the part of the prompt that changed.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{hex, ChatBackend, ChatRequest, LlmError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionDigest {
    pub name: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub digest: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sections: Vec<SectionDigest>,
}

impl CassetteEntry {
    pub fn new(request: &ChatRequest, response: impl Into<String>) -> Self {
        Self {
            digest: request.digest(),
            response: response.into(),
            sections: sections_of(request),
        }
    }
}

/// Split each message at lines starting with `## ` and hash every part.
pub fn sections_of(request: &ChatRequest) -> Vec<SectionDigest> {
    let mut out = Vec::new();
    for (i, m) in request.messages.iter().enumerate() {
        let mut name = format!("message {i} preamble");
        let mut body = String::new();
        let mut flush = |name: &str, body: &mut String| {
            if !body.is_empty() {
                out.push(SectionDigest {
                    name: name.to_string(),
                    digest: hex(&Sha256::digest(body.as_bytes())),
                });
                body.clear();
            }
        };
        for line in m.content.lines() {
            if let Some(h) = line.strip_prefix("## ") {
                flush(&name, &mut body);
                name = format!("message {i} section \"{}\"", h.trim());
            }
            body.push_str(line);
            body.push('\n');
        }
        flush(&name, &mut body);
    }
    out
}

fn first_difference(recorded: &CassetteEntry, request: &ChatRequest) -> String {
    if recorded.sections.is_empty() {
        return "unknown (recording has no section digests)".into();
    }
    let now = sections_of(request);
    for (i, old) in recorded.sections.iter().enumerate() {
        match now.get(i) {
            None => return format!("{} (missing from request)", old.name),
            Some(new) if new != old => return new.name.clone(),
            _ => {}
        }
    }
    match now.get(recorded.sections.len()) {
        Some(extra) => format!("{} (not in recording)", extra.name),
        None => "request parameters (temperature)".into(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cassette {
    pub entries: Vec<CassetteEntry>,
}

impl Cassette {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let file =
            File::open(path).map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| LlmError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line).map_err(|e| LlmError::BadCassette {
                line: i + 1,
                reason: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        let mut f =
            File::create(path).map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))?;
        for e in &self.entries {
            writeln!(f, "{}", serde_json::to_string(e).expect("entry serializes"))
                .map_err(|e| LlmError::Io(e.to_string()))?;
        }
        Ok(())
    }
}

/// Wraps a backend and records every exchange, optionally appending each
/// record to a file as it happens.
pub struct RecordingBackend<B> {
    inner: B,
    entries: Mutex<Vec<CassetteEntry>>,
    sink: Option<PathBuf>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            entries: Mutex::new(Vec::new()),
            sink: None,
        }
    }

    /// Also append records to `path` (created or truncated now).
    pub fn to_file(inner: B, path: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let path = path.into();
        File::create(&path).map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self {
            inner,
            entries: Mutex::new(Vec::new()),
            sink: Some(path),
        })
    }

    pub fn cassette(&self) -> Cassette {
        Cassette {
            entries: self.entries.lock().expect("cassette lock").clone(),
        }
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        // Held across the inner call so record order equals call order.
        let mut entries = self.entries.lock().expect("cassette lock");
        let response = self.inner.complete(request)?;
        let entry = CassetteEntry::new(request, response.clone());
        if let Some(path) = &self.sink {
            let mut f = OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))?;
            writeln!(
                f,
                "{}",
                serde_json::to_string(&entry).expect("entry serializes")
            )
            .map_err(|e| LlmError::Io(e.to_string()))?;
        }
        entries.push(entry);
        Ok(response)
    }
}

/// Serves recorded responses in order, checking each request digest.
pub struct ReplayBackend {
    entries: Vec<CassetteEntry>,
    cursor: Mutex<usize>,
}

impl ReplayBackend {
    pub fn new(cassette: Cassette) -> Self {
        Self {
            entries: cassette.entries,
            cursor: Mutex::new(0),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(Cassette::load(path)?))
    }

    /// Entries not yet consumed.
    pub fn remaining(&self) -> usize {
        self.entries.len() - *self.cursor.lock().expect("cursor lock")
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut cursor = self.cursor.lock().expect("cursor lock");
        let index = *cursor;
        let entry = self
            .entries
            .get(index)
            .ok_or(LlmError::CassetteExhausted(index))?;
        if entry.digest != request.digest() {
            return Err(LlmError::CassetteDrift {
                index,
                section: first_difference(entry, request),
            });
        }
        *cursor += 1;
        Ok(entry.response.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedBackend;

    fn prompt(i: usize) -> ChatRequest {
        ChatRequest::user(format!("## Rules\nbe careful\n## Scene\nstep {i}\n"))
    }

    #[test]
    fn replay_returns_recorded_texts_in_order() {
        let rec = RecordingBackend::new(ScriptedBackend::new(
            (0..5)
                .map(|i| {
                    crate::llm::ScriptRule::contains(format!("step {i}"), format!("answer {i}"))
                })
                .collect(),
            None,
        ));
        for i in 0..5 {
            rec.complete(&prompt(i)).unwrap();
        }
        let replay = ReplayBackend::new(rec.cassette());
        for i in 0..5 {
            assert_eq!(replay.complete(&prompt(i)).unwrap(), format!("answer {i}"));
        }
        assert_eq!(replay.remaining(), 0);
        assert_eq!(
            replay.complete(&prompt(0)),
            Err(LlmError::CassetteExhausted(5))
        );
    }

    #[test]
    fn reordered_request_is_drift_naming_section() {
        let cassette = Cassette {
            entries: (0..2)
                .map(|i| CassetteEntry::new(&prompt(i), "x"))
                .collect(),
        };
        let replay = ReplayBackend::new(cassette);
        match replay.complete(&prompt(1)) {
            Err(LlmError::CassetteDrift { index: 0, section }) => {
                assert_eq!(section, "message 0 section \"Scene\"")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn file_round_trip_and_line_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let rec = RecordingBackend::to_file(ScriptedBackend::constant("ok"), &path).unwrap();
        rec.complete(&prompt(0)).unwrap();
        rec.complete(&prompt(1)).unwrap();
        let loaded = Cassette::load(&path).unwrap();
        assert_eq!(loaded, rec.cassette());
        std::fs::write(
            &path,
            format!(
                "{}\n{{\"digest\":",
                serde_json::to_string(&loaded.entries[0]).unwrap()
            ),
        )
        .unwrap();
        assert!(matches!(
            Cassette::load(&path),
            Err(LlmError::BadCassette { line: 2, .. })
        ));
    }
}
