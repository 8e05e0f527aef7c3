//! Closed-loop episode execution.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use super::config::{BackendConfig, PolicyKind, RunConfig};
use super::episode::{
    EpisodeHeader, EpisodeRecord, EpisodeWriter, Outcome, OutcomeRecord, StepEvent, StepRecord,
    EPISODE_SCHEMA_VERSION,
};
use super::HarnessError;
use crate::expert::{detect_deviation, oracle_policy_with, Author, ExpertFeedback};
use crate::llm::{ChatBackend, RecordingBackend, RemoteBackend, ReplayBackend, ScriptedBackend};
use crate::memory::{reflect, MemoryBank, MemoryQuery};
use crate::perception::ToolCatalog;
use crate::planner::forward_search;
use crate::react::{run_decision_cycle, AgentTranscript, CycleInputs, Decision, MemoryNote};
use crate::sim::{
    spawn_scenario, step_world, MetaAction, SimWarning, WorldState, DECISION_INTERVAL,
};

pub fn episode_id(policy: PolicyKind, seed: u64) -> String {
    format!("ep-{}-{seed}", policy.name())
}

/// Final-answer text that selects `action` in one step.
pub fn oracle_proxy_response(action: MetaAction) -> String {
    format!(
        "Thought: The rule-based expert picks {action} for this scene.\nFinal Answer: {action} follows the car-following and lane-change rules here.\ndecision: {action}"
    )
}

/// Shared resources for the episodes of one run or batch.
#[derive(Clone, Default)]
pub struct RunContext {
    /// Backend shared by all episodes. When unset, one is built per
    /// episode from the config.
    pub backend: Option<Arc<dyn ChatBackend>>,
    pub bank: Option<Arc<MemoryBank>>,
}

impl RunContext {
    /// Open the memory bank named in the config, if memory is enabled.
    pub fn from_config(config: &RunConfig) -> Result<Self, HarnessError> {
        let mut ctx = Self::default();
        if config.memory.enabled || config.auto_reflect {
            ctx.bank = Some(Arc::new(match &config.memory.bank {
                Some(path) => MemoryBank::open(path, Arc::new(crate::memory::LocalEmbedder))?,
                None => MemoryBank::local(),
            }));
        }
        if let BackendConfig::Remote = config.backend {
            if config.policy == PolicyKind::Llm || config.auto_reflect {
                ctx.backend = Some(Arc::new(RemoteBackend::from_env()?));
            }
        }
        Ok(ctx)
    }
}

fn seeded_path(template: &str, seed: u64) -> String {
    template.replace("{seed}", &seed.to_string())
}

/// Backend for one episode, or `None` for the per-step oracle proxy.
fn episode_backend(
    config: &RunConfig,
    ctx: &RunContext,
    seed: u64,
) -> Result<Option<Arc<dyn ChatBackend>>, HarnessError> {
    if let Some(b) = &ctx.backend {
        return Ok(Some(b.clone()));
    }
    Ok(match &config.backend {
        BackendConfig::OracleProxy => None,
        BackendConfig::Scripted { script } => {
            let text = std::fs::read_to_string(script)
                .map_err(|e| HarnessError::Io(format!("{}: {e}", script.display())))?;
            Some(Arc::new(ScriptedBackend::from_toml(&text)?))
        }
        BackendConfig::Remote => Some(Arc::new(RemoteBackend::from_env()?)),
        BackendConfig::Record { cassette } => Some(Arc::new(RecordingBackend::to_file(
            RemoteBackend::from_env()?,
            seeded_path(cassette, seed),
        )?)),
        BackendConfig::Replay { cassette } => Some(Arc::new(ReplayBackend::from_file(Path::new(
            &seeded_path(cassette, seed),
        ))?)),
    })
}

struct LlmState {
    backend: Option<Arc<dyn ChatBackend>>,
    catalog: ToolCatalog,
    previous: Option<Decision>,
}

enum Choice {
    Decided(Decision, Option<AgentTranscript>),
    Failed(String, Option<AgentTranscript>),
}

fn plain(action: MetaAction, explanation: String) -> Decision {
    Decision {
        action,
        explanation,
        step_count: 0,
        fallback: false,
    }
}

fn decide(
    config: &RunConfig,
    ctx: &RunContext,
    llm: &mut LlmState,
    world: &WorldState,
    step: usize,
) -> Choice {
    match config.policy {
        PolicyKind::Oracle => {
            let a = oracle_policy_with(world, &config.oracle);
            Choice::Decided(plain(a, "oracle policy".into()), None)
        }
        PolicyKind::Scripted => {
            let a = config.scripted.action_at(step);
            Choice::Decided(plain(a, "scripted policy".into()), None)
        }
        PolicyKind::Search => {
            let (a, d) = forward_search(world, &config.search, &config.weights);
            let explanation = format!(
                "search: best score {:.3} over {} leaves{}",
                d.best_score,
                d.n_leaves,
                if d.was_tie { " (tie)" } else { "" }
            );
            Choice::Decided(plain(a, explanation), None)
        }
        PolicyKind::Llm => {
            let memories = match (&ctx.bank, config.memory.enabled) {
                (Some(bank), true) => {
                    let q = MemoryQuery {
                        query_text: crate::perception::scene_to_text(world).text,
                        k: config.memory.k,
                        min_similarity: config.memory.min_similarity,
                    };
                    match bank.retrieve(&q) {
                        Ok(hits) => hits.iter().map(|(e, _)| MemoryNote::from(e)).collect(),
                        Err(e) => {
                            return Choice::Failed(format!("memory retrieval failed: {e}"), None)
                        }
                    }
                }
                _ => Vec::new(),
            };
            let proxy;
            let backend: &dyn ChatBackend = match &llm.backend {
                Some(b) => b.as_ref(),
                None => {
                    proxy = ScriptedBackend::constant(oracle_proxy_response(oracle_policy_with(
                        world,
                        &config.oracle,
                    )));
                    &proxy
                }
            };
            let inputs = CycleInputs {
                previous: llm.previous.as_ref(),
                memories,
                limits: config.limits,
                assets: None,
                model_tag: &config.model_tag,
            };
            match run_decision_cycle(world, backend, &llm.catalog, &inputs) {
                Ok((d, t)) => {
                    llm.previous = Some(d.clone());
                    Choice::Decided(d, Some(t))
                }
                Err(e) => Choice::Failed(e.to_string(), Some(e.transcript)),
            }
        }
    }
}

/// Run one episode. With `record`, every line is appended to that file as
/// soon as it is known.
pub fn run_episode(
    config: &RunConfig,
    seed: u64,
    ctx: &RunContext,
    record: Option<&Path>,
) -> Result<EpisodeRecord, HarnessError> {
    config.validate()?;
    let started = Instant::now();
    let id = episode_id(config.policy, seed);
    let header = EpisodeHeader {
        schema_version: EPISODE_SCHEMA_VERSION,
        episode_id: id.clone(),
        seed,
        policy: config.policy,
        config: config.clone(),
    };
    let mut writer = match record {
        Some(p) => Some(EpisodeWriter::create(p, &header)?),
        None => None,
    };
    let mut world = spawn_scenario(&config.scenario.with_seed(seed))?;
    let mut llm = LlmState {
        backend: if config.policy == PolicyKind::Llm || config.auto_reflect {
            episode_backend(config, ctx, seed)?
        } else {
            None
        },
        catalog: ToolCatalog::standard(),
        previous: None,
    };

    let mut steps = Vec::new();
    let mut speed_sum = 0.0;
    let mut lane_changes = 0;
    let mut outcome = Outcome::Pass;
    let mut error = None;
    let mut partial = None;

    for k in 0..config.horizon_steps {
        let (decision, transcript) = match decide(config, ctx, &mut llm, &world, k) {
            Choice::Decided(d, t) => (d, t),
            Choice::Failed(msg, t) => {
                outcome = Outcome::Error;
                error = Some(msg);
                partial = t;
                break;
            }
        };
        let mut deviation = detect_deviation(&decision, &world, &id, k);
        let mut events = Vec::new();

        if let (Some(dev), true, Some(bank)) = (&mut deviation, config.auto_reflect, &ctx.bank) {
            let feedback = ExpertFeedback {
                episode_id: id.clone(),
                step_index: k,
                expert_action: Some(dev.expert_action),
                advice_text: format!("The expert would choose {} here.", dev.expert_action),
                author: Author::Oracle,
            };
            dev.advice = Some(feedback.advice_text.clone());
            let t = crate::expert::step_transcript(&world, transcript.as_ref(), &decision);
            let reflector: &dyn ChatBackend = match &llm.backend {
                Some(b) => b.as_ref(),
                None => &NoReflection,
            };
            match bank
                .get_or_insert_with(&feedback.origin_key(), || reflect(&t, &feedback, reflector))
            {
                Ok((entry, _)) => events.push(StepEvent::MemoryInserted { entry_id: entry.id }),
                Err(e) => events.push(StepEvent::ReflectionFailed {
                    message: e.to_string(),
                }),
            }
        }

        let out = step_world(&world, decision.action, DECISION_INTERVAL);
        let ego_id = out.world.ego().id.clone();
        let ego_hit = out.collisions.iter().any(|c| c.involves(&ego_id));
        let off_road = out
            .warnings
            .iter()
            .any(|w| matches!(w, SimWarning::EgoReachedRoadEnd { .. }));
        events.extend(out.collisions.iter().map(|c| StepEvent::Collision {
            collision: c.clone(),
        }));
        events.extend(
            out.warnings
                .iter()
                .map(|w| StepEvent::Warning { warning: w.clone() }),
        );
        speed_sum += out.world.ego().speed;
        if out.applied_action.is_lane_change() {
            lane_changes += 1;
        }
        let rec = StepRecord {
            index: k,
            world,
            transcript,
            decision,
            applied_action: out.applied_action,
            events,
            deviation,
        };
        if let Some(w) = writer.as_mut() {
            w.step(&rec)?;
        }
        steps.push(rec);
        world = out.world;
        if ego_hit {
            outcome = Outcome::Collision;
            break;
        }
        if off_road {
            outcome = Outcome::OffRoad;
            break;
        }
    }

    let n = steps.len();
    let result = OutcomeRecord {
        outcome,
        final_world: world,
        steps: n,
        mean_speed: if n == 0 { 0.0 } else { speed_sum / n as f64 },
        lane_changes,
        error,
        partial_transcript: partial,
        wall_time_ms: started.elapsed().as_millis() as u64,
    };
    if let Some(w) = writer.as_mut() {
        w.outcome(&result)?;
    }
    Ok(EpisodeRecord {
        header,
        steps,
        outcome: Some(result),
    })
}

/// Reflection stand-in when the policy has no chat backend of its own.
struct NoReflection;

impl ChatBackend for NoReflection {
    fn complete(&self, _: &crate::llm::ChatRequest) -> Result<String, crate::llm::LlmError> {
        Err(crate::llm::LlmError::Config(
            "no chat backend is configured for reflection".into(),
        ))
    }
}
