//! Episode files: one JSON record per line.
//!
//! The first line is the header (with `schema_version`), then one line per
//! decision step, then an outcome line once the episode ends. Lines are
//! appended and flushed as the episode runs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{PolicyKind, RunConfig};
use crate::expert::DeviationRecord;
use crate::react::{AgentTranscript, Decision};
use crate::sim::{CollisionEvent, MetaAction, SimWarning, WorldState};

pub const EPISODE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path} line {line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Collision,
    OffRoad,
    Error,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pass => "pass",
            Self::Collision => "collision",
            Self::OffRoad => "off_road",
            Self::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StepEvent {
    Collision { collision: CollisionEvent },
    Warning { warning: SimWarning },
    MemoryInserted { entry_id: String },
    ReflectionFailed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub schema_version: u32,
    pub episode_id: String,
    pub seed: u64,
    pub policy: PolicyKind,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    /// World before the decision.
    pub world: WorldState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<AgentTranscript>,
    pub decision: Decision,
    /// Action the simulator actually applied (lane changes off the road degrade to IDLE).
    pub applied_action: MetaAction,
    pub events: Vec<StepEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviation: Option<DeviationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub outcome: Outcome,
    /// World after the last step.
    pub final_world: WorldState,
    pub steps: usize,
    /// Mean ego speed after each step, m/s.
    pub mean_speed: f64,
    pub lane_changes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial_transcript: Option<AgentTranscript>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum EpisodeLine {
    Header(EpisodeHeader),
    Step(StepRecord),
    Outcome(OutcomeRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub header: EpisodeHeader,
    pub steps: Vec<StepRecord>,
    pub outcome: Option<OutcomeRecord>,
}

impl EpisodeRecord {
    pub fn id(&self) -> &str {
        &self.header.episode_id
    }

    pub fn write(&self, path: &Path) -> Result<(), EpisodeError> {
        let mut w = EpisodeWriter::create(path, &self.header)?;
        for s in &self.steps {
            w.step(s)?;
        }
        if let Some(o) = &self.outcome {
            w.outcome(o)?;
        }
        Ok(())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EpisodeError {
    EpisodeError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Appends and flushes one line per record.
pub struct EpisodeWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl EpisodeWriter {
    pub fn create(path: &Path, header: &EpisodeHeader) -> Result<Self, EpisodeError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
        }
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.line(&EpisodeLine::Header(header.clone()))?;
        Ok(w)
    }

    fn line(&mut self, l: &EpisodeLine) -> Result<(), EpisodeError> {
        let text = serde_json::to_string(l).expect("episode line serializes");
        writeln!(self.out, "{text}").map_err(|e| io_err(&self.path, e))?;
        self.out.flush().map_err(|e| io_err(&self.path, e))
    }

    pub fn step(&mut self, s: &StepRecord) -> Result<(), EpisodeError> {
        self.line(&EpisodeLine::Step(s.clone()))
    }

    pub fn outcome(&mut self, o: &OutcomeRecord) -> Result<(), EpisodeError> {
        self.line(&EpisodeLine::Outcome(o.clone()))
    }
}

/// Tagged enums buffer their content, which cannot hold the generator's
/// 128-bit counter, so dispatch on `kind` by hand.
fn parse_line(line: &str) -> Result<EpisodeLine, String> {
    let mut v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let kind = v
        .as_object_mut()
        .ok_or("record is not a JSON object")?
        .remove("kind")
        .ok_or("record has no `kind`")?;
    let e = |e: serde_json::Error| e.to_string();
    match kind.as_str() {
        Some("header") => serde_json::from_value(v)
            .map(EpisodeLine::Header)
            .map_err(e),
        Some("step") => serde_json::from_value(v).map(EpisodeLine::Step).map_err(e),
        Some("outcome") => serde_json::from_value(v)
            .map(EpisodeLine::Outcome)
            .map_err(e),
        _ => Err(format!("unknown record kind {kind}")),
    }
}

pub fn read_episode(path: &Path) -> Result<EpisodeRecord, EpisodeError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let parse_err = |line: usize, reason: String| EpisodeError::Parse {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut header = None;
    let mut steps = Vec::new();
    let mut outcome = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_line(&line).map_err(|e| parse_err(n, e))?;
        match (rec, header.is_some()) {
            (EpisodeLine::Header(h), false) => {
                if h.schema_version != EPISODE_SCHEMA_VERSION {
                    return Err(parse_err(
                        n,
                        format!("unsupported schema_version {}", h.schema_version),
                    ));
                }
                header = Some(h);
            }
            (EpisodeLine::Header(_), true) => return Err(parse_err(n, "second header".into())),
            (_, false) => return Err(parse_err(n, "first record must be the header".into())),
            (EpisodeLine::Step(s), true) => {
                if outcome.is_some() {
                    return Err(parse_err(n, "step after outcome".into()));
                }
                if s.index != steps.len() {
                    return Err(parse_err(
                        n,
                        format!("expected step {}, found {}", steps.len(), s.index),
                    ));
                }
                steps.push(s);
            }
            (EpisodeLine::Outcome(o), true) => {
                if outcome.is_some() {
                    return Err(parse_err(n, "second outcome".into()));
                }
                outcome = Some(o);
            }
        }
    }
    let header = header.ok_or_else(|| parse_err(1, "empty episode file".into()))?;
    Ok(EpisodeRecord {
        header,
        steps,
        outcome,
    })
}

/// Listing row served by the review service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeListing {
    pub id: String,
    pub seed: u64,
    pub outcome: Option<Outcome>,
    pub steps: usize,
}

/// Directory of `<episode_id>.jsonl` files.
#[derive(Debug, Clone)]
pub struct EpisodeStore {
    dir: PathBuf,
}

impl EpisodeStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn valid_id(id: &str) -> bool {
        !id.is_empty()
            && id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
            && !id.starts_with('.')
    }

    pub fn path_for(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    pub fn save(&self, record: &EpisodeRecord) -> Result<PathBuf, EpisodeError> {
        let path = self.path_for(record.id());
        record.write(&path)?;
        Ok(path)
    }

    /// `None` when no such episode exists.
    pub fn load(&self, id: &str) -> Result<Option<EpisodeRecord>, EpisodeError> {
        if !Self::valid_id(id) {
            return Ok(None);
        }
        let path = self.path_for(id);
        if !path.is_file() {
            return Ok(None);
        }
        read_episode(&path).map(Some)
    }

    /// Every parseable episode, sorted by id. Unreadable files are skipped with a warning.
    pub fn list(&self) -> Result<Vec<EpisodeListing>, EpisodeError> {
        let entries = match std::fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&self.dir, e)),
        };
        let mut out = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| io_err(&self.dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            match read_episode(&path) {
                Ok(r) => out.push(EpisodeListing {
                    id: r.header.episode_id.clone(),
                    seed: r.header.seed,
                    outcome: r.outcome.as_ref().map(|o| o.outcome),
                    steps: r.steps.len(),
                }),
                Err(e) => tracing::warn!(error = %e, "skipping unreadable episode file"),
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }
}
