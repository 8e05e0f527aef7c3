//! Reflected decision scenarios, stored with embeddings and retrieved by
//! cosine similarity.

mod embed;
mod reflect;

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{fnv1a64, local_embed, LocalEmbedder, LOCAL_EMBEDDER_TAG};
pub use reflect::{parse_reflection, reflect, reflection_prompt, ReflectionReport};

use crate::llm::{cosine, Embedder, LlmError, EMBEDDING_DIM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MemoryError {
    #[error("embedding failed: {0}")]
    Embed(#[from] LlmError),
    #[error("bank file {path}: {message}")]
    Io { path: String, message: String },
    #[error("bank line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("entry {id} was embedded by `{entry_tag}` but the bank uses `{bank_tag}`")]
    EmbedderMismatch {
        id: String,
        entry_tag: String,
        bank_tag: String,
    },
    #[error("invalid entry: {0}")]
    Invalid(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("reflection backend failed: {0}")]
    ReflectionBackend(LlmError),
    #[error("reflection output is missing the {label} field")]
    ReflectionParse { label: String, raw_output: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemorySource {
    ExpertFeedback,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub id: String,
    pub scenario_summary: String,
    pub proper_decision: String,
    pub reflection: String,
    pub embedding: Vec<f64>,
    /// Unix time in milliseconds.
    pub created_at: u64,
    pub source: MemorySource,
    pub embedder_tag: String,
    /// Key of the feedback that produced this entry, for idempotent ingestion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

impl MemoryEntry {
    pub fn validate(&self) -> Result<(), MemoryError> {
        if self.scenario_summary.trim().is_empty() || self.proper_decision.trim().is_empty() {
            return Err(MemoryError::Invalid(format!(
                "{}: summary and decision must be non-empty",
                self.id
            )));
        }
        if self.embedding.len() != EMBEDDING_DIM {
            return Err(MemoryError::Invalid(format!(
                "{}: embedding has {} components, expected {EMBEDDING_DIM}",
                self.id,
                self.embedding.len()
            )));
        }
        let norm = self.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(MemoryError::Invalid(format!(
                "{}: embedding norm is {norm}",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryQuery {
    pub query_text: String,
    pub k: usize,
    pub min_similarity: f64,
}

impl Default for MemoryQuery {
    fn default() -> Self {
        Self {
            query_text: String::new(),
            k: 3,
            min_similarity: 0.7,
        }
    }
}

impl MemoryQuery {
    pub fn new(query_text: impl Into<String>) -> Self {
        Self {
            query_text: query_text.into(),
            ..Self::default()
        }
    }
}

type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

fn system_clock() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Entry list behind a snapshot pointer: readers clone the `Arc`, the single
/// writer swaps in a new vector.
pub struct MemoryBank {
    embedder: Arc<dyn Embedder>,
    entries: RwLock<Arc<Vec<MemoryEntry>>>,
    writer: Mutex<()>,
    sink: Option<PathBuf>,
    clock: Clock,
}

impl std::fmt::Debug for MemoryBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryBank")
            .field("embedder", &self.embedder.tag())
            .field("entries", &self.len())
            .field("sink", &self.sink)
            .finish()
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> MemoryError {
    MemoryError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

impl MemoryBank {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        Self {
            embedder,
            entries: RwLock::new(Arc::new(Vec::new())),
            writer: Mutex::new(()),
            sink: None,
            clock: Arc::new(system_clock),
        }
    }

    /// In-memory bank using the local embedder.
    pub fn local() -> Self {
        Self::new(Arc::new(LocalEmbedder))
    }

    /// Load `path` if it exists and append every later insert to it.
    pub fn open(
        path: impl Into<PathBuf>,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, MemoryError> {
        let path = path.into();
        let mut bank = if path.exists() {
            Self::load(&path, embedder)?
        } else {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| io_err(&path, e))?;
            }
            File::create(&path).map_err(|e| io_err(&path, e))?;
            Self::new(embedder)
        };
        bank.sink = Some(path);
        Ok(bank)
    }

    /// Replace the timestamp source.
    pub fn with_clock(mut self, clock: impl Fn() -> u64 + Send + Sync + 'static) -> Self {
        self.clock = Arc::new(clock);
        self
    }

    pub fn embedder_tag(&self) -> String {
        self.embedder.tag()
    }

    pub fn snapshot(&self) -> Arc<Vec<MemoryEntry>> {
        self.entries.read().expect("bank lock").clone()
    }

    pub fn len(&self) -> usize {
        self.snapshot().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn find_by_origin(&self, origin: &str) -> Option<MemoryEntry> {
        self.snapshot()
            .iter()
            .find(|e| e.origin.as_deref() == Some(origin))
            .cloned()
    }

    fn push_locked(
        &self,
        summary: &str,
        decision: &str,
        reflection: &str,
        source: MemorySource,
        origin: Option<String>,
    ) -> Result<MemoryEntry, MemoryError> {
        let current = self.snapshot();
        let entry = MemoryEntry {
            id: format!("mem-{:05}", current.len() + 1),
            scenario_summary: summary.trim().to_string(),
            proper_decision: decision.trim().to_string(),
            reflection: reflection.trim().to_string(),
            embedding: self.embedder.embed(summary)?,
            created_at: (self.clock)(),
            source,
            embedder_tag: self.embedder.tag(),
            origin,
        };
        entry.validate()?;
        if let Some(path) = &self.sink {
            let mut f = OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|e| io_err(path, e))?;
            writeln!(
                f,
                "{}",
                serde_json::to_string(&entry).expect("entry serializes")
            )
            .map_err(|e| io_err(path, e))?;
        }
        let mut next = (*current).clone();
        next.push(entry.clone());
        *self.entries.write().expect("bank lock") = Arc::new(next);
        Ok(entry)
    }

    /// Store a reflection as a new entry.
    pub fn insert(
        &self,
        report: &ReflectionReport,
        origin: Option<String>,
    ) -> Result<MemoryEntry, MemoryError> {
        let _w = self.writer.lock().expect("writer lock");
        self.push_locked(
            &report.scenario_summary,
            &report.proper_decision,
            &report.deviation_cause,
            MemorySource::ExpertFeedback,
            origin,
        )
    }

    pub fn insert_manual(
        &self,
        summary: &str,
        decision: &str,
        reflection: &str,
    ) -> Result<MemoryEntry, MemoryError> {
        let _w = self.writer.lock().expect("writer lock");
        self.push_locked(summary, decision, reflection, MemorySource::Manual, None)
    }

    /// Return the entry for `origin` if present, otherwise build a report with
    /// `make` and insert it. The writer lock is held throughout, so concurrent
    /// duplicate submissions produce one entry. The flag is true for a new entry.
    pub fn get_or_insert_with<E>(
        &self,
        origin: &str,
        make: impl FnOnce() -> Result<ReflectionReport, E>,
    ) -> Result<(MemoryEntry, bool), E>
    where
        E: From<MemoryError>,
    {
        let _w = self.writer.lock().expect("writer lock");
        if let Some(existing) = self.find_by_origin(origin) {
            return Ok((existing, false));
        }
        let report = make()?;
        let entry = self.push_locked(
            &report.scenario_summary,
            &report.proper_decision,
            &report.deviation_cause,
            MemorySource::ExpertFeedback,
            Some(origin.to_string()),
        )?;
        Ok((entry, true))
    }

    /// Entries ranked by similarity, filtered by the threshold, top `k`.
    /// Ties keep the older entry first.
    pub fn retrieve(&self, q: &MemoryQuery) -> Result<Vec<(MemoryEntry, f64)>, MemoryError> {
        if q.k == 0 {
            return Err(MemoryError::InvalidQuery("k must be at least 1".into()));
        }
        let snapshot = self.snapshot();
        if snapshot.is_empty() {
            return Ok(Vec::new());
        }
        let tag = self.embedder.tag();
        if let Some(e) = snapshot.iter().find(|e| e.embedder_tag != tag) {
            return Err(MemoryError::EmbedderMismatch {
                id: e.id.clone(),
                entry_tag: e.embedder_tag.clone(),
                bank_tag: tag,
            });
        }
        let query = self.embedder.embed(&q.query_text)?;
        let mut scored: Vec<(usize, f64)> = snapshot
            .iter()
            .enumerate()
            .map(|(i, e)| (i, cosine(&query, &e.embedding)))
            .filter(|(_, s)| *s >= q.min_similarity)
            .collect();
        // Stable sort keeps insertion order among equal scores.
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(scored
            .into_iter()
            .take(q.k)
            .map(|(i, s)| (snapshot[i].clone(), s))
            .collect())
    }

    /// Write every entry, one JSON object per line.
    pub fn persist(&self, path: &Path) -> Result<(), MemoryError> {
        let mut f = File::create(path).map_err(|e| io_err(path, e))?;
        for e in self.snapshot().iter() {
            writeln!(f, "{}", serde_json::to_string(e).expect("entry serializes"))
                .map_err(|e| io_err(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path, embedder: Arc<dyn Embedder>) -> Result<Self, MemoryError> {
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| io_err(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: MemoryEntry =
                serde_json::from_str(&line).map_err(|e| MemoryError::Corrupt {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            entry.validate().map_err(|e| MemoryError::Corrupt {
                line: i + 1,
                reason: e.to_string(),
            })?;
            entries.push(entry);
        }
        let bank = Self::new(embedder);
        *bank.entries.write().expect("bank lock") = Arc::new(entries);
        Ok(bank)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixed_bank() -> MemoryBank {
        MemoryBank::local().with_clock(|| 1_700_000_000_000)
    }

    fn seeded() -> MemoryBank {
        let bank = fixed_bank();
        bank.insert_manual(
            "two vehicles in the same lane moving towards each other",
            "keep moving and nudge left",
            "r",
        )
        .unwrap();
        bank.insert_manual(
            "a truck ahead carrying traffic cones in its cargo bed",
            "keep speed",
            "r",
        )
        .unwrap();
        bank.insert_manual(
            "vehicle merging from an on-ramp into the rightmost lane",
            "make room",
            "r",
        )
        .unwrap();
        bank
    }

    #[test]
    fn empty_bank_returns_nothing() {
        assert!(fixed_bank()
            .retrieve(&MemoryQuery::new("anything"))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn paraphrase_ranks_narrow_lane_first() {
        let bank = seeded();
        let q = MemoryQuery {
            query_text: "narrow alley with an oncoming car in the same lane".into(),
            k: 3,
            min_similarity: -1.0,
        };
        let r = bank.retrieve(&q).unwrap();
        assert_eq!(r[0].0.id, "mem-00001");
        // Pinned with the independent hasher: 0.400501, 0.150188 (merge), 0.050063 (cones).
        assert!((r[0].1 - 0.400501).abs() < 1e-6);
        assert_eq!(r[1].0.id, "mem-00003");
    }

    #[test]
    fn unsatisfiable_threshold_is_empty() {
        let bank = seeded();
        let q = MemoryQuery {
            query_text: "two vehicles in the same lane moving towards each other".into(),
            min_similarity: 1.01,
            ..MemoryQuery::default()
        };
        assert!(bank.retrieve(&q).unwrap().is_empty());
    }

    #[test]
    fn ties_keep_older_first() {
        let bank = fixed_bank();
        bank.insert_manual("same summary", "a", "").unwrap();
        bank.insert_manual("same summary", "b", "").unwrap();
        let r = bank.retrieve(&MemoryQuery::new("same summary")).unwrap();
        assert_eq!(
            r.iter()
                .map(|(e, _)| e.proper_decision.as_str())
                .collect::<Vec<_>>(),
            ["a", "b"]
        );
    }

    #[test]
    fn mismatched_embedder_is_rejected() {
        struct Other;
        impl Embedder for Other {
            fn embed(&self, t: &str) -> Result<Vec<f64>, LlmError> {
                local_embed(t)
            }
            fn tag(&self) -> String {
                "other".into()
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.jsonl");
        seeded().persist(&path).unwrap();
        let bank = MemoryBank::load(&path, Arc::new(Other)).unwrap();
        assert!(matches!(
            bank.retrieve(&MemoryQuery::new("x")),
            Err(MemoryError::EmbedderMismatch { .. })
        ));
    }

    #[test]
    fn persist_load_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.jsonl");
        fixed_bank().persist(&path).unwrap();
        assert!(MemoryBank::load(&path, Arc::new(LocalEmbedder))
            .unwrap()
            .is_empty());

        let bank = seeded();
        bank.persist(&path).unwrap();
        let loaded = MemoryBank::load(&path, Arc::new(LocalEmbedder)).unwrap();
        assert_eq!(*loaded.snapshot(), *bank.snapshot());

        let text = std::fs::read_to_string(&path).unwrap();
        let cut = &text[..text.len() - 20];
        std::fs::write(&path, cut).unwrap();
        assert!(matches!(
            MemoryBank::load(&path, Arc::new(LocalEmbedder)),
            Err(MemoryError::Corrupt { line: 3, .. })
        ));
    }

    #[test]
    fn open_appends_inserts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("bank.jsonl");
        let bank = MemoryBank::open(&path, Arc::new(LocalEmbedder)).unwrap();
        bank.insert_manual("two cars", "wait", "").unwrap();
        let reopened = MemoryBank::open(&path, Arc::new(LocalEmbedder)).unwrap();
        assert_eq!(reopened.len(), 1);
        reopened.insert_manual("three cars", "wait", "").unwrap();
        assert_eq!(reopened.snapshot()[1].id, "mem-00002");
    }

    #[test]
    fn get_or_insert_is_idempotent() {
        let bank = fixed_bank();
        let report = ReflectionReport {
            deviation_cause: "c".into(),
            scenario_summary: "s".into(),
            proper_decision: "d".into(),
            raw_model_output: "raw".into(),
        };
        let (a, new_a) = bank
            .get_or_insert_with::<MemoryError>("key", || Ok(report.clone()))
            .unwrap();
        let (b, new_b) = bank
            .get_or_insert_with::<MemoryError>("key", || panic!("must not reflect twice"))
            .unwrap();
        assert!(new_a && !new_b);
        assert_eq!(a, b);
        assert_eq!(bank.len(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn round_trip_random_entries(summaries in proptest::collection::vec("[a-z]{1,8}( [a-z]{1,8}){0,6}", 0..100)) {
            let bank = fixed_bank();
            for s in &summaries {
                bank.insert_manual(s, "decide", "why").unwrap();
            }
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("b.jsonl");
            bank.persist(&path).unwrap();
            let loaded = MemoryBank::load(&path, Arc::new(LocalEmbedder)).unwrap();
            prop_assert_eq!(&*loaded.snapshot(), &*bank.snapshot());
        }

        #[test]
        fn self_retrieval_and_monotone_k(summaries in proptest::collection::vec("[a-z]{1,8}( [a-z]{1,8}){0,6}", 1..15), k in 1usize..6) {
            let bank = fixed_bank();
            for s in &summaries {
                bank.insert_manual(s, "decide", "").unwrap();
            }
            for e in bank.snapshot().iter() {
                let q = MemoryQuery { query_text: e.scenario_summary.clone(), k: 1, min_similarity: 0.99 };
                let r = bank.retrieve(&q).unwrap();
                // A duplicate summary inserted earlier legitimately wins the tie.
                prop_assert!((r[0].1 - 1.0).abs() < 1e-9);
                prop_assert_eq!(&local_embed(&r[0].0.scenario_summary).unwrap(), &e.embedding);
            }
            let q = |k| MemoryQuery { query_text: summaries[0].clone(), k, min_similarity: -1.0 };
            let small = bank.retrieve(&q(k)).unwrap();
            let large = bank.retrieve(&q(k + 1)).unwrap();
            prop_assert_eq!(&large[..small.len()], &small[..]);
        }
    }
}
