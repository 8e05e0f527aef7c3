//! Shared deterministic fixtures: hand-built worlds, scripted model
//! answers and the shipped scenario cards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::harness::ScenarioCard;
use crate::llm::{ScriptRule, ScriptedBackend};
use crate::perception::{SceneText, ToolCatalog};
use crate::react::{AgentTranscript, Decision, MissingMarker, ParseOutcome};
use crate::sim::testing::world_with;
use crate::sim::{MetaAction, VehicleKind, VehicleState, WorldState};

/// Ego in the rightmost of four lanes behind a slower `veh4`, with a faster
/// `veh1` in the lane to its left.
pub fn lane_change_world() -> WorldState {
    world_with(
        4,
        vec![
            VehicleState::new("ego", VehicleKind::Ego, 3, 120.0, 25.0),
            VehicleState::new("veh4", VehicleKind::Npc, 3, 148.0, 23.0),
            VehicleState::new("veh1", VehicleKind::Npc, 2, 60.0, 27.0),
        ],
    )
}

/// A tool-by-tool answer script for [`lane_change_world`]: list the actions,
/// check FASTER, IDLE, the vehicles a left change affects, then LANE_LEFT,
/// and finally choose LANE_LEFT. Each rule keys on the latest observation,
/// so rules are listed latest step first.
pub fn lane_change_script() -> ScriptedBackend {
    let call = |thought: &str, tool: &str, input: &str| {
        format!("Thought: {thought}\nAction: {tool}\nAction Input: {input}")
    };
    ScriptedBackend::new(
        vec![
            ScriptRule::contains(
                "LANE_LEFT is safe with veh1",
                "Thought: IDLE and LANE_LEFT are both safe. lane_2 moves faster than veh4 and leaves more room to act.\n\
                 Final Answer: Change to lane_2: it is safe with veh1 and the traffic there is faster than veh4.\n\
                 decision: LANE_LEFT",
            ),
            ScriptRule::contains(
                "Changing to lane_2 affects",
                call("Check whether moving left is safe.", "check_action_safety", r#"{"action": "LANE_LEFT"}"#),
            ),
            ScriptRule::contains(
                "IDLE is safe",
                call(
                    "Keeping speed is fine. Which vehicles would a left change affect?",
                    "get_lane_change_affected_vehicles",
                    r#"{"direction": "left"}"#,
                ),
            ),
            ScriptRule::contains(
                "FASTER is unsafe",
                call("Accelerating is risky. Check keeping speed.", "check_action_safety", r#"{"action": "IDLE"}"#),
            ),
            ScriptRule::contains(
                "Available actions: ",
                call("Check accelerating first.", "check_action_safety", r#"{"action": "FASTER"}"#),
            ),
        ],
        Some(call("First list what the ego car can do.", "get_available_actions", "{}")),
    )
}

pub const NARROW_LANE_SCENE: &str =
    "Narrow road with a single lane, a little wider than two cars.\n\
ego: heading east, position 0.0 m, speed 5.0 m/s (ego)\n\
car1: heading west in the same lane, position 40.0 m, speed 5.0 m/s";

pub const NARROW_LANE_ADVICE: &str =
    "A human driver keeps the car moving and nudges slightly to the left; there is room for both cars.";

pub const NARROW_LANE_SUMMARY: &str = "two vehicles in the same lane moving towards each other";

/// The agent's overly cautious answer in the narrow-lane encounter.
pub fn narrow_lane_transcript() -> AgentTranscript {
    AgentTranscript {
        prompt_version: "v1".into(),
        scene: SceneText {
            text: NARROW_LANE_SCENE.into(),
            vehicle_count: 2,
            schema_version: crate::perception::SCENE_SCHEMA_VERSION,
        },
        steps: Vec::new(),
        decision: Some(Decision {
            action: MetaAction::Slower,
            explanation: "Stop and wait for the oncoming car to pass first.".into(),
            step_count: 1,
            fallback: false,
        }),
    }
}

/// Reflection answer for the narrow-lane feedback.
pub fn narrow_lane_reflection_script() -> ScriptedBackend {
    ScriptedBackend::new(
        vec![ScriptRule::contains(
            "nudges slightly to the left",
            format!(
                "CAUSE: I judged the lane too narrow for both cars and chose to stop, although there was room to pass.\n\
                 SCENARIO: {NARROW_LANE_SUMMARY}\n\
                 PROPER_DECISION: keep going and move slightly to the side; stopping only disturbs traffic"
            ),
        )],
        None,
    )
}

/// Query text that paraphrases the narrow-lane encounter.
pub const ALLEY_QUERY: &str =
    "Two cars meet head on in a narrow alley, driving towards each other in the same lane.";

pub const CONES_ON_TRUCK: &str = include_str!("../cards/cones-on-truck.toml");
pub const CONES_ON_GROUND: &str = include_str!("../cards/cones-on-ground.toml");
pub const NARROW_ALLEY: &str = include_str!("../cards/alley/narrow-alley.toml");
pub const CARD_SCRIPT: &str = include_str!("../cards/script.toml");
pub const ALLEY_SCRIPT: &str = include_str!("../cards/alley/script.toml");

pub fn card(text: &str) -> ScenarioCard {
    ScenarioCard::from_toml(text).expect("shipped card parses")
}

pub fn card_script() -> ScriptedBackend {
    ScriptedBackend::from_toml(CARD_SCRIPT).expect("shipped card script parses")
}

pub fn alley_script() -> ScriptedBackend {
    ScriptedBackend::from_toml(ALLEY_SCRIPT).expect("shipped alley script parses")
}

/// Malformed model outputs, one JSON object per line with `text` and the
/// expected `diagnostic`.
pub const MALFORMED_OUTPUTS: &str = include_str!("../data/malformed_outputs.jsonl");

pub fn malformed_outputs() -> Vec<(String, MissingMarker)> {
    #[derive(serde::Deserialize)]
    struct Case {
        text: String,
        diagnostic: MissingMarker,
    }
    MALFORMED_OUTPUTS
        .lines()
        .map(|l| {
            let c: Case = serde_json::from_str(l).expect("corpus line parses");
            (c.text, c.diagnostic)
        })
        .collect()
}

const WORDS: &[&str] = &[
    "the",
    "ego",
    "car",
    "lane",
    "gap",
    "is",
    "wide",
    "veh2",
    "ahead",
    "slower",
    "keep",
    "safe",
    "check",
    "speed",
    "25.0",
    "m/s",
    "left",
    "right",
    "brake",
    "{",
    "}",
    "\"lane\":",
    "\"lane_1\"",
    "maybe",
    "then",
    ",",
    ".",
    "(ok)",
];

fn phrase(rng: &mut impl Rng, max_words: usize) -> String {
    let n = rng.gen_range(1..=max_words);
    (0..n)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// A synthetic agent transcript: zero to five tool calls, then a final
/// decision. Free text never contains a marker, so every step renders to a
/// canonical form.
pub fn synthetic_transcript(seed: u64) -> Vec<ParseOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tools = ToolCatalog::standard();
    let names = tools.names();
    let mut steps = Vec::new();
    for _ in 0..rng.gen_range(0..=5) {
        steps.push(ParseOutcome::ToolCall {
            thought: if rng.gen_bool(0.2) {
                String::new()
            } else {
                phrase(&mut rng, 12)
            },
            name: names[rng.gen_range(0..names.len())].to_string(),
            input: if rng.gen_bool(0.3) {
                "{}".into()
            } else {
                phrase(&mut rng, 4)
            },
        });
    }
    let lines = rng.gen_range(1..=3);
    steps.push(ParseOutcome::FinalDecision {
        thought: if rng.gen_bool(0.2) {
            String::new()
        } else {
            phrase(&mut rng, 12)
        },
        action_token: MetaAction::ALL[rng.gen_range(0..MetaAction::ALL.len())]
            .name()
            .to_string(),
        explanation: (0..lines)
            .map(|_| phrase(&mut rng, 10))
            .collect::<Vec<_>>()
            .join("\n"),
    });
    steps
}
