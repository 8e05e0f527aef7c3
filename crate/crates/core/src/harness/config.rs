//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::expert::OracleConfig;
use crate::planner::{ObjectiveWeights, SearchConfig};
use crate::react::CycleLimits;
use crate::sim::{MetaAction, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Llm,
    #[default]
    Oracle,
    Search,
    Scripted,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Llm => "llm",
            Self::Oracle => "oracle",
            Self::Search => "search",
            Self::Scripted => "scripted",
        }
    }
}

impl FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "llm" => Ok(Self::Llm),
            "oracle" => Ok(Self::Oracle),
            "search" => Ok(Self::Search),
            "scripted" => Ok(Self::Scripted),
            other => Err(format!(
                "unknown policy `{other}` (expected llm, oracle, search or scripted)"
            )),
        }
    }
}

/// Chat backend behind the llm policy. Cassette paths may contain `{seed}`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    /// Answers every cycle with the oracle's action as a one-step final answer.
    #[default]
    OracleProxy,
    /// Rule file in TOML.
    Scripted { script: PathBuf },
    /// Remote provider configured from the environment.
    Remote,
    /// Remote provider, recording every exchange.
    Record { cassette: String },
    /// Recorded exchanges only; no network.
    Replay { cassette: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub enabled: bool,
    pub bank: Option<PathBuf>,
    pub k: usize,
    pub min_similarity: f64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            bank: None,
            k: 3,
            min_similarity: 0.3,
        }
    }
}

/// Fixed action sequence; the last action repeats once the list runs out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedPolicyConfig {
    pub actions: Vec<MetaAction>,
}

impl Default for ScriptedPolicyConfig {
    fn default() -> Self {
        Self {
            actions: vec![MetaAction::Idle],
        }
    }
}

impl ScriptedPolicyConfig {
    pub fn action_at(&self, step: usize) -> MetaAction {
        self.actions
            .get(step)
            .or(self.actions.last())
            .copied()
            .unwrap_or(MetaAction::Idle)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub policy: PolicyKind,
    pub backend: BackendConfig,
    pub horizon_steps: usize,
    pub seeds: Vec<u64>,
    pub memory: MemoryConfig,
    /// Reflect on oracle deviations during the run and store the lessons.
    pub auto_reflect: bool,
    pub search: SearchConfig,
    pub weights: ObjectiveWeights,
    pub limits: CycleLimits,
    pub oracle: OracleConfig,
    pub scripted: ScriptedPolicyConfig,
    pub model_tag: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            policy: PolicyKind::Oracle,
            backend: BackendConfig::default(),
            horizon_steps: 30,
            seeds: Vec::new(),
            memory: MemoryConfig::default(),
            auto_reflect: false,
            search: SearchConfig::default(),
            weights: ObjectiveWeights::default(),
            limits: CycleLimits::default(),
            oracle: OracleConfig::default(),
            scripted: ScriptedPolicyConfig::default(),
            model_tag: String::new(),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a file; relative paths inside it are taken from its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        match &mut self.backend {
            BackendConfig::Scripted { script } => *script = resolve(base, script),
            BackendConfig::Record { cassette } | BackendConfig::Replay { cassette } => {
                *cassette = resolve(base, Path::new(cassette.as_str()))
                    .display()
                    .to_string()
            }
            BackendConfig::OracleProxy | BackendConfig::Remote => {}
        }
        if let Some(bank) = &mut self.memory.bank {
            *bank = resolve(base, bank);
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.horizon_steps == 0 {
            return Err(HarnessError::Config(
                "horizon_steps must be at least 1".into(),
            ));
        }
        if self.search.depth == 0 {
            return Err(HarnessError::Config(
                "search.depth must be at least 1".into(),
            ));
        }
        if self.memory.k == 0 {
            return Err(HarnessError::Config("memory.k must be at least 1".into()));
        }
        self.weights.validate().map_err(HarnessError::Config)?;
        self.scenario
            .road
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.scenario
            .npc_params
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Parse `1..100`, `1..=100`, `3` or `1,2,5` into a seed list.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>, String> {
    let spec = spec.trim();
    let num = |s: &str| {
        s.trim()
            .parse::<u64>()
            .map_err(|_| format!("`{s}` is not a seed"))
    };
    if let Some((a, b)) = spec.split_once("..=") {
        let (a, b) = (num(a)?, num(b)?);
        return Ok((a..=b).collect());
    }
    if let Some((a, b)) = spec.split_once("..") {
        // Inclusive, so `1..100` means one hundred seeds.
        let (a, b) = (num(a)?, num(b)?);
        return Ok((a..=b).collect());
    }
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(num)
        .collect()
}
