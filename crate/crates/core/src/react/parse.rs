//! Marker grammar for model output.
//!
//! ```text
//! Thought: <free text>
//! Action: <tool name>
//! Action Input: <tool input>
//! ```
//! or
//! ```text
//! Thought: <free text>
//! Final Answer: <explanation>
//! decision: <ACTION_NAME>
//! ```
//! Markers are case-sensitive. Anything from the first `Observation:` on is
//! discarded because observations come from tools, never from the model.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const THOUGHT: &str = "Thought:";
pub const ACTION: &str = "Action:";
pub const ACTION_INPUT: &str = "Action Input:";
pub const OBSERVATION: &str = "Observation:";
pub const FINAL_ANSWER: &str = "Final Answer:";
pub const DECISION: &str = "decision:";

/// First required marker absent from a malformed output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingMarker {
    /// Neither `Action:` nor `Final Answer:`.
    ActionOrFinalAnswer,
    /// `Action:` without a following `Action Input:`.
    ActionInput,
    /// `Final Answer:` without a `decision:` line.
    DecisionLine,
    /// `Action:` with nothing after it.
    ToolName,
}

impl fmt::Display for MissingMarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ActionOrFinalAnswer => "missing \"Action:\" or \"Final Answer:\"",
            Self::ActionInput => "missing \"Action Input:\" after \"Action:\"",
            Self::DecisionLine => "missing \"decision: <ACTION>\" line in the final answer",
            Self::ToolName => "missing tool name after \"Action:\"",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ParseOutcome {
    ToolCall {
        thought: String,
        name: String,
        input: String,
    },
    FinalDecision {
        thought: String,
        action_token: String,
        explanation: String,
    },
    Malformed {
        raw_text: String,
        diagnostic: MissingMarker,
    },
}

/// Parsed output plus whether a model-written observation was cut off.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed {
    pub outcome: ParseOutcome,
    pub discarded_observation: bool,
}

/// Text between `start` and the earliest of `stops` (or the end), trimmed.
fn until_any<'a>(text: &'a str, stops: &[&str]) -> &'a str {
    let end = stops
        .iter()
        .filter_map(|s| text.find(s))
        .min()
        .unwrap_or(text.len());
    text[..end].trim()
}

fn thought_of(text: &str) -> String {
    match text.find(THOUGHT) {
        Some(i) => until_any(&text[i + THOUGHT.len()..], &[ACTION, FINAL_ANSWER]).to_string(),
        None => String::new(),
    }
}

pub fn parse_llm_output(text: &str) -> Parsed {
    let (body, discarded_observation) = match text.find(OBSERVATION) {
        Some(i) => (&text[..i], true),
        None => (text, false),
    };
    let malformed = |diagnostic| ParseOutcome::Malformed {
        raw_text: text.to_string(),
        diagnostic,
    };
    let thought = thought_of(body);

    let outcome = if let Some(i) = body.find(FINAL_ANSWER) {
        let block = &body[i + FINAL_ANSWER.len()..];
        let mut token = None;
        let mut explanation = Vec::new();
        for line in block.lines() {
            let t = line.trim();
            if token.is_none() {
                if let Some(rest) = t.strip_prefix(DECISION) {
                    token = Some(rest.trim().to_string());
                    continue;
                }
            }
            if !t.is_empty() {
                explanation.push(t);
            }
        }
        match token {
            Some(action_token) => ParseOutcome::FinalDecision {
                thought,
                action_token,
                explanation: explanation.join("\n"),
            },
            None => malformed(MissingMarker::DecisionLine),
        }
    } else if let Some(i) = body.find(ACTION) {
        let after = &body[i + ACTION.len()..];
        let name = after.lines().next().unwrap_or("").trim();
        if name.is_empty() {
            malformed(MissingMarker::ToolName)
        } else {
            match after.find(ACTION_INPUT) {
                Some(j) => ParseOutcome::ToolCall {
                    thought,
                    name: name.to_string(),
                    input: until_any(&after[j + ACTION_INPUT.len()..], &[THOUGHT, ACTION])
                        .to_string(),
                },
                None => malformed(MissingMarker::ActionInput),
            }
        }
    } else {
        malformed(MissingMarker::ActionOrFinalAnswer)
    };
    Parsed {
        outcome,
        discarded_observation,
    }
}

/// Canonical text for an outcome; parsing it back yields the same outcome.
pub fn render_outcome(outcome: &ParseOutcome) -> String {
    let thought = |t: &str| {
        if t.is_empty() {
            String::new()
        } else {
            format!("{THOUGHT} {t}\n")
        }
    };
    match outcome {
        ParseOutcome::ToolCall {
            thought: t,
            name,
            input,
        } => {
            format!("{}{ACTION} {name}\n{ACTION_INPUT} {input}", thought(t))
        }
        ParseOutcome::FinalDecision {
            thought: t,
            action_token,
            explanation,
        } => format!(
            "{}{FINAL_ANSWER} {explanation}\n{DECISION} {action_token}",
            thought(t)
        ),
        ParseOutcome::Malformed { raw_text, .. } => raw_text.clone(),
    }
}
