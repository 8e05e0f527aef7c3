//! ReAct decision cycle: prompt, parse, tool use, validated decision.

mod parse;
mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{
    parse_llm_output, render_outcome, MissingMarker, ParseOutcome, Parsed, ACTION, ACTION_INPUT,
    DECISION, FINAL_ANSWER, OBSERVATION, THOUGHT,
};
pub use prompt::{build_prompt, MemoryNote, PromptAssets, PromptBundle};

use crate::llm::{ChatBackend, ChatRequest, LlmError};
use crate::perception::{get_available_actions, scene_to_text, SceneText, ToolCatalog};
use crate::sim::{MetaAction, WorldState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub action: MetaAction,
    pub explanation: String,
    pub step_count: usize,
    /// Set when the orchestrator substituted IDLE.
    pub fallback: bool,
}

impl Decision {
    pub fn fallback(reason: impl Into<String>, step_count: usize) -> Self {
        Self {
            action: MetaAction::Idle,
            explanation: format!("fallback to IDLE: {}", reason.into()),
            step_count,
            fallback: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    /// Tool ran and returned an observation.
    Tool,
    /// Tool exists but rejected its input.
    ToolError,
    /// Named tool is not in the catalog.
    UnknownTool,
    Malformed,
    Final,
}

/// One model turn, recorded verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReActStep {
    pub thought: String,
    pub tool_name: String,
    pub tool_input: String,
    pub observation: String,
    pub status: StepStatus,
    /// Exact model output, including any discarded tail.
    pub raw_output: String,
    /// The model wrote its own `Observation:`; that text was dropped.
    #[serde(default)]
    pub discarded_observation: bool,
    /// Digest of the request that produced this turn.
    pub request_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentTranscript {
    pub prompt_version: String,
    pub scene: SceneText,
    pub steps: Vec<ReActStep>,
    pub decision: Option<Decision>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CycleLimits {
    pub max_steps: usize,
    /// Malformed outputs tolerated; one more triggers the fallback.
    pub max_malformed: usize,
}

impl Default for CycleLimits {
    fn default() -> Self {
        Self {
            max_steps: 8,
            max_malformed: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("decision cycle aborted: {source}")]
pub struct CycleError {
    pub source: LlmError,
    /// Everything recorded before the failure.
    pub transcript: AgentTranscript,
}

/// Exact-match `token` against the available actions.
pub fn validate_decision(token: &str, explanation: &str, available: &[MetaAction]) -> Decision {
    match token.parse::<MetaAction>() {
        Err(_) => Decision::fallback(format!("`{token}` is not an action name"), 0),
        Ok(a) if !available.contains(&a) => Decision::fallback(format!("{a} is not available"), 0),
        Ok(action) => Decision {
            action,
            explanation: if explanation.trim().is_empty() {
                "no explanation given".into()
            } else {
                explanation.trim().to_string()
            },
            step_count: 0,
            fallback: false,
        },
    }
}

/// Everything a cycle needs besides the world and backend.
#[derive(Debug, Clone, Default)]
pub struct CycleInputs<'a> {
    pub previous: Option<&'a Decision>,
    pub memories: Vec<MemoryNote>,
    pub limits: CycleLimits,
    pub assets: Option<&'a PromptAssets>,
    pub model_tag: &'a str,
}

fn scratch_entry(step: &ReActStep) -> String {
    let head = match step.status {
        StepStatus::Malformed => {
            let raw = step.raw_output.split(OBSERVATION).next().unwrap_or("");
            raw.trim().to_string()
        }
        _ => render_outcome(&ParseOutcome::ToolCall {
            thought: step.thought.clone(),
            name: step.tool_name.clone(),
            input: step.tool_input.clone(),
        }),
    };
    format!("{head}\n{OBSERVATION} {}\n", step.observation)
}

/// Run one thought/action/observation loop against a frozen world.
pub fn run_decision_cycle(
    world: &WorldState,
    backend: &dyn ChatBackend,
    catalog: &ToolCatalog,
    inputs: &CycleInputs<'_>,
) -> Result<(Decision, AgentTranscript), CycleError> {
    let default_assets = PromptAssets::v1();
    let assets = inputs.assets.unwrap_or(&default_assets);
    let scene = scene_to_text(world);
    let mut bundle = PromptBundle::new(
        assets,
        catalog,
        scene.clone(),
        inputs.previous.cloned(),
        inputs.memories.clone(),
    );
    let mut transcript = AgentTranscript {
        prompt_version: assets.version.clone(),
        scene,
        steps: Vec::new(),
        decision: None,
    };
    let available = get_available_actions(world);
    let mut malformed = 0usize;

    let decision = loop {
        let count = transcript.steps.len();
        if count >= inputs.limits.max_steps {
            break Decision::fallback(
                format!("no decision within {} steps", inputs.limits.max_steps),
                count,
            );
        }
        let mut request = ChatRequest::user(build_prompt(&bundle));
        request.model_tag = inputs.model_tag.to_string();
        let raw = match backend.complete(&request) {
            Ok(r) => r,
            Err(source) => return Err(CycleError { source, transcript }),
        };
        let parsed = parse_llm_output(&raw);
        let mut step = ReActStep {
            thought: String::new(),
            tool_name: String::new(),
            tool_input: String::new(),
            observation: String::new(),
            status: StepStatus::Malformed,
            raw_output: raw,
            discarded_observation: parsed.discarded_observation,
            request_digest: request.digest(),
        };
        match parsed.outcome {
            ParseOutcome::FinalDecision {
                thought,
                action_token,
                explanation,
            } => {
                step.thought = thought;
                step.status = StepStatus::Final;
                transcript.steps.push(step);
                let mut d = validate_decision(&action_token, &explanation, &available);
                d.step_count = transcript.steps.len();
                break d;
            }
            ParseOutcome::ToolCall {
                thought,
                name,
                input,
            } => {
                step.thought = thought;
                step.observation = if catalog.get(&name).is_none() {
                    step.status = StepStatus::UnknownTool;
                    format!(
                        "unknown tool {name}; available: {}",
                        catalog.names().join(", ")
                    )
                } else {
                    match catalog.execute(world, &name, &input) {
                        Ok(obs) => {
                            step.status = StepStatus::Tool;
                            obs
                        }
                        Err(e) => {
                            step.status = StepStatus::ToolError;
                            format!("error: {e}")
                        }
                    }
                };
                step.tool_name = name;
                step.tool_input = input;
            }
            ParseOutcome::Malformed { diagnostic, .. } => {
                malformed += 1;
                step.observation = format!(
                    "could not parse your output ({diagnostic}); follow the response format"
                );
                if malformed > inputs.limits.max_malformed {
                    transcript.steps.push(step);
                    break Decision::fallback(
                        format!("{malformed} malformed outputs"),
                        transcript.steps.len(),
                    );
                }
            }
        }
        bundle.scratchpad.push_str(&scratch_entry(&step));
        transcript.steps.push(step);
    };
    transcript.decision = Some(decision.clone());
    Ok((decision, transcript))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ScriptRule, ScriptedBackend};
    use crate::sim::testing::world_with;
    use crate::sim::{VehicleKind, VehicleState};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn world() -> WorldState {
        world_with(
            4,
            vec![
                VehicleState::new("ego", VehicleKind::Ego, 3, 120.0, 25.0),
                VehicleState::new("veh4", VehicleKind::Npc, 3, 148.0, 23.0),
                VehicleState::new("veh1", VehicleKind::Npc, 2, 60.0, 27.0),
            ],
        )
    }

    fn run(backend: &dyn ChatBackend) -> (Decision, AgentTranscript) {
        run_decision_cycle(
            &world(),
            backend,
            &ToolCatalog::standard(),
            &CycleInputs::default(),
        )
        .unwrap()
    }

    #[test]
    fn validate_decision_cases() {
        let all = MetaAction::ALL.to_vec();
        assert_eq!(
            validate_decision("LANE_LEFT", "x", &all).action,
            MetaAction::LaneLeft
        );
        let rightmost = get_available_actions(&world());
        let d = validate_decision("LANE_RIGHT", "x", &rightmost);
        assert!(d.fallback && d.action == MetaAction::Idle);
        let d = validate_decision("turn left please", "x", &all);
        assert!(d.fallback && d.explanation.contains("turn left please"));
        assert!(validate_decision("lane_left", "x", &all).fallback);
    }

    #[test]
    fn immediate_final_answer_is_one_step() {
        let b =
            ScriptedBackend::constant("Thought: simple\nFinal Answer: keep going\ndecision: IDLE");
        let (d, t) = run(&b);
        assert_eq!(d.action, MetaAction::Idle);
        assert_eq!(d.step_count, 1);
        assert!(!d.fallback);
        assert_eq!(t.steps.len(), 1);
    }

    #[test]
    fn endless_tool_calls_fall_back() {
        let b = ScriptedBackend::constant(
            "Thought: again\nAction: get_available_actions\nAction Input: {}",
        );
        let (d, t) = run(&b);
        assert!(d.fallback);
        assert_eq!(d.action, MetaAction::Idle);
        assert_eq!(d.step_count, 8);
        assert_eq!(t.steps.len(), 8);
    }

    #[test]
    fn third_malformed_output_falls_back() {
        let b = ScriptedBackend::constant("go fast");
        let (d, t) = run(&b);
        assert!(d.fallback);
        assert_eq!(t.steps.len(), 3);
        assert!(t
            .steps
            .iter()
            .all(|s| s.status == StepStatus::Malformed && s.raw_output == "go fast"));
    }

    #[test]
    fn unknown_tool_gets_corrective_observation() {
        let b = ScriptedBackend::new(
            vec![ScriptRule::contains(
                "unknown tool fly",
                "Final Answer: ok\ndecision: SLOWER",
            )],
            Some("Action: fly\nAction Input: up".into()),
        );
        let (d, t) = run(&b);
        assert_eq!(d.action, MetaAction::Slower);
        assert_eq!(t.steps[0].status, StepStatus::UnknownTool);
        assert!(t.steps[0]
            .observation
            .starts_with("unknown tool fly; available: get_available_actions"));
    }

    #[test]
    fn transport_failure_keeps_partial_transcript() {
        struct FailSecond(AtomicUsize);
        impl ChatBackend for FailSecond {
            fn complete(&self, _: &ChatRequest) -> Result<String, LlmError> {
                if self.0.fetch_add(1, Ordering::SeqCst) == 0 {
                    Ok("Action: get_available_actions\nAction Input: {}".into())
                } else {
                    Err(LlmError::Transport {
                        attempts: 4,
                        message: "down".into(),
                    })
                }
            }
        }
        let err = run_decision_cycle(
            &world(),
            &FailSecond(AtomicUsize::new(0)),
            &ToolCatalog::standard(),
            &CycleInputs::default(),
        )
        .unwrap_err();
        assert_eq!(err.transcript.steps.len(), 1);
        assert!(matches!(err.source, LlmError::Transport { .. }));
    }

    #[test]
    fn previous_decision_reaches_the_prompt() {
        let prev = Decision {
            action: MetaAction::Faster,
            explanation: "nobody ahead within 80 m".into(),
            step_count: 3,
            fallback: false,
        };
        let b = ScriptedBackend::new(
            vec![ScriptRule {
                all_of: vec![
                    "Previous decision: FASTER".into(),
                    "nobody ahead within 80 m".into(),
                ],
                response: "Final Answer: consistent\ndecision: FASTER".into(),
                ..ScriptRule::default()
            }],
            Some("Final Answer: no\ndecision: IDLE".into()),
        );
        let inputs = CycleInputs {
            previous: Some(&prev),
            ..CycleInputs::default()
        };
        let (d, _) = run_decision_cycle(&world(), &b, &ToolCatalog::standard(), &inputs).unwrap();
        assert_eq!(d.action, MetaAction::Faster);
    }
}
