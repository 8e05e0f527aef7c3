//! Self-reflection on a deviating decision.

use serde::{Deserialize, Serialize};

use super::MemoryError;
use crate::expert::ExpertFeedback;
use crate::llm::{ChatBackend, ChatRequest};
use crate::react::AgentTranscript;
use crate::template;

const REFLECTION_TEMPLATE: &str = include_str!("../../prompts/reflection_v1.txt");
const LABELS: [&str; 3] = ["CAUSE:", "SCENARIO:", "PROPER_DECISION:"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionReport {
    pub deviation_cause: String,
    pub scenario_summary: String,
    pub proper_decision: String,
    pub raw_model_output: String,
}

pub fn reflection_prompt(transcript: &AgentTranscript, feedback: &ExpertFeedback) -> String {
    let (action, explanation) = match &transcript.decision {
        Some(d) => (d.action.name().to_string(), d.explanation.clone()),
        None => ("none".to_string(), "no decision was reached".to_string()),
    };
    let mut expert = Vec::new();
    if let Some(a) = feedback.expert_action {
        expert.push(format!("Expert action: {a}"));
    }
    if !feedback.advice_text.trim().is_empty() {
        expert.push(format!("Expert advice: {}", feedback.advice_text.trim()));
    }
    template::render(
        REFLECTION_TEMPLATE,
        &[
            ("scene", &transcript.scene.text),
            ("agent_action", &action),
            ("agent_explanation", &explanation),
            ("expert_feedback", &expert.join("\n")),
        ],
    )
    .expect("reflection template placeholders are all supplied")
}

/// Extract the labeled fields. A field runs from its label to the next label
/// line or the end of the text.
pub fn parse_reflection(raw: &str) -> Result<ReflectionReport, MemoryError> {
    let mut values: [Option<String>; 3] = [None, None, None];
    let mut current: Option<usize> = None;
    for line in raw.lines() {
        let t = line.trim();
        if let Some((i, rest)) = LABELS
            .iter()
            .enumerate()
            .find_map(|(i, l)| t.strip_prefix(l).map(|r| (i, r)))
        {
            if values[i].is_none() {
                values[i] = Some(rest.trim().to_string());
                current = Some(i);
            } else {
                current = None;
            }
            continue;
        }
        if let (Some(i), false) = (current, t.is_empty()) {
            let v = values[i].as_mut().expect("current field is set");
            if !v.is_empty() {
                v.push(' ');
            }
            v.push_str(t);
        }
    }
    let take = |i: usize| -> Result<String, MemoryError> {
        values[i]
            .clone()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| MemoryError::ReflectionParse {
                label: LABELS[i].trim_end_matches(':').to_string(),
                raw_output: raw.to_string(),
            })
    };
    Ok(ReflectionReport {
        deviation_cause: take(0)?,
        scenario_summary: take(1)?,
        proper_decision: take(2)?,
        raw_model_output: raw.to_string(),
    })
}

pub fn reflect(
    transcript: &AgentTranscript,
    feedback: &ExpertFeedback,
    backend: &dyn ChatBackend,
) -> Result<ReflectionReport, MemoryError> {
    let request = ChatRequest::user(reflection_prompt(transcript, feedback));
    let raw = backend
        .complete(&request)
        .map_err(MemoryError::ReflectionBackend)?;
    parse_reflection(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_labeled_fields_with_continuations() {
        let r = parse_reflection("CAUSE: too careful\nthe gap was ample\nSCENARIO: two cars\nPROPER_DECISION: keep going").unwrap();
        assert_eq!(r.deviation_cause, "too careful the gap was ample");
        assert_eq!(r.scenario_summary, "two cars");
        assert_eq!(r.proper_decision, "keep going");
    }

    #[test]
    fn missing_label_keeps_raw_output() {
        match parse_reflection("CAUSE: x\nPROPER_DECISION: y") {
            Err(MemoryError::ReflectionParse { label, raw_output }) => {
                assert_eq!(label, "SCENARIO");
                assert_eq!(raw_output, "CAUSE: x\nPROPER_DECISION: y");
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_reflection("CAUSE: x\nSCENARIO:\nPROPER_DECISION: y").is_err());
    }
}
