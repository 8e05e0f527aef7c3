//! Episodes, batches, replay and scenario cards.

mod batch;
mod cards;
mod config;
mod episode;
mod replay;
mod run;

use thiserror::Error;

pub use batch::{run_batch, EpisodeSummary, Metrics};
pub use cards::{
    assess_card, hazard_prompt, label_matches, load_cards, parse_assessment, CardError, CardReport,
    ExpectedLabel, HazardAssessment, ScenarioCard,
};
pub use config::{
    parse_seeds, BackendConfig, MemoryConfig, PolicyKind, RunConfig, ScriptedPolicyConfig,
};
pub use episode::{
    read_episode, EpisodeError, EpisodeHeader, EpisodeLine, EpisodeListing, EpisodeRecord,
    EpisodeStore, EpisodeWriter, Outcome, OutcomeRecord, StepEvent, StepRecord,
    EPISODE_SCHEMA_VERSION,
};
pub use replay::{replay, replay_record, Divergence, ReplayReport};
pub use run::{episode_id, oracle_proxy_response, run_episode, RunContext};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Llm(#[from] crate::llm::LlmError),
    #[error(transparent)]
    Memory(#[from] crate::memory::MemoryError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Card(#[from] CardError),
}
