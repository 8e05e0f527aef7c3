//! Scenario cards: pre-written scene descriptions assessed for hazards.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatBackend, ChatRequest, LlmError};
use crate::memory::{MemoryBank, MemoryError, MemoryQuery};
use crate::react::MemoryNote;
use crate::template;

const HAZARD_TEMPLATE: &str = include_str!("../../prompts/hazard_v1.txt");

#[derive(Debug, Error)]
pub enum CardError {
    #[error("card {path}: {reason}")]
    Load { path: String, reason: String },
    #[error("card {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("card {id}: backend failed: {source}")]
    Backend { id: String, source: LlmError },
    #[error("card {id}: memory retrieval failed: {source}")]
    Memory { id: String, source: MemoryError },
    #[error("card {id}: model output is missing the {label} field")]
    Unparseable {
        id: String,
        label: String,
        raw_output: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedLabel {
    pub hazardous: bool,
    /// Keyword the advice must contain, compared case-insensitively.
    pub decision: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioCard {
    pub id: String,
    pub description: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_label: Option<ExpectedLabel>,
}

impl ScenarioCard {
    pub fn validate(&self) -> Result<(), CardError> {
        if self.description.trim().is_empty() {
            return Err(CardError::Invalid {
                id: self.id.clone(),
                reason: "description is empty".into(),
            });
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

/// Every `*.toml` card in `dir` other than `script.toml`, sorted by id.
pub fn load_cards(dir: &Path) -> Result<Vec<ScenarioCard>, CardError> {
    let err = |p: &Path, reason: String| CardError::Load {
        path: p.display().to_string(),
        reason,
    };
    let mut cards = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| err(dir, e.to_string()))? {
        let path = entry.map_err(|e| err(dir, e.to_string()))?.path();
        let is_card = path.extension().and_then(|e| e.to_str()) == Some("toml")
            && path.file_name().and_then(|n| n.to_str()) != Some("script.toml");
        if !is_card {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| err(&path, e.to_string()))?;
        let card = ScenarioCard::from_toml(&text).map_err(|r| err(&path, r))?;
        card.validate()?;
        cards.push(card);
    }
    cards.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(cards)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HazardAssessment {
    pub hazardous: bool,
    pub advice: String,
    pub raw_model_output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardReport {
    pub card_id: String,
    pub prompt: String,
    pub assessment: HazardAssessment,
    /// Memory ids shown in the prompt, best first.
    pub retrieved: Vec<String>,
    /// `None` when the card has no expected label.
    pub matched: Option<bool>,
}

pub fn hazard_prompt(card: &ScenarioCard, memories: &[MemoryNote]) -> String {
    let block = if memories.is_empty() {
        String::new()
    } else {
        let lines: Vec<String> = memories.iter().map(MemoryNote::line).collect();
        format!("## Past experience\n{}\n", lines.join("\n"))
    };
    template::render(
        HAZARD_TEMPLATE,
        &[
            ("description", card.description.trim()),
            ("question", card.question.trim()),
            ("memories", &block),
        ],
    )
    .expect("hazard template placeholders are all supplied")
}

/// Parse the `HAZARDOUS: yes|no` and `ADVICE:` lines. Advice may continue on
/// following lines.
pub fn parse_assessment(raw: &str) -> Result<HazardAssessment, String> {
    let mut hazardous = None;
    let mut advice: Option<String> = None;
    let mut in_advice = false;
    for line in raw.lines() {
        let t = line.trim();
        if let Some(v) = t.strip_prefix("HAZARDOUS:") {
            in_advice = false;
            if hazardous.is_none() {
                hazardous = match v.trim().trim_end_matches('.').to_ascii_lowercase().as_str() {
                    "yes" => Some(true),
                    "no" => Some(false),
                    _ => return Err("HAZARDOUS".into()),
                };
            }
        } else if let Some(v) = t.strip_prefix("ADVICE:") {
            if advice.is_none() {
                advice = Some(v.trim().to_string());
                in_advice = true;
            }
        } else if in_advice && !t.is_empty() {
            let a = advice.as_mut().expect("advice started");
            if !a.is_empty() {
                a.push(' ');
            }
            a.push_str(t);
        }
    }
    let hazardous = hazardous.ok_or("HAZARDOUS")?;
    let advice = advice.filter(|a| !a.is_empty()).ok_or("ADVICE")?;
    Ok(HazardAssessment {
        hazardous,
        advice,
        raw_model_output: raw.to_string(),
    })
}

pub fn label_matches(expected: &ExpectedLabel, a: &HazardAssessment) -> bool {
    expected.hazardous == a.hazardous
        && a.advice
            .to_lowercase()
            .contains(&expected.decision.to_lowercase())
}

/// Build the hazard prompt (with memories retrieved by the card description
/// when a bank is given), query the backend and compare with the label.
pub fn assess_card(
    card: &ScenarioCard,
    backend: &dyn ChatBackend,
    bank: Option<&MemoryBank>,
    min_similarity: f64,
) -> Result<CardReport, CardError> {
    card.validate()?;
    let hits = match bank {
        Some(b) => b
            .retrieve(&MemoryQuery {
                query_text: card.description.clone(),
                k: 3,
                min_similarity,
            })
            .map_err(|source| CardError::Memory {
                id: card.id.clone(),
                source,
            })?,
        None => Vec::new(),
    };
    let notes: Vec<MemoryNote> = hits.iter().map(|(e, _)| MemoryNote::from(e)).collect();
    let prompt = hazard_prompt(card, &notes);
    let raw = backend
        .complete(&ChatRequest::user(prompt.clone()))
        .map_err(|source| CardError::Backend {
            id: card.id.clone(),
            source,
        })?;
    let assessment = parse_assessment(&raw).map_err(|label| CardError::Unparseable {
        id: card.id.clone(),
        label,
        raw_output: raw.clone(),
    })?;
    let matched = card
        .expected_label
        .as_ref()
        .map(|l| label_matches(l, &assessment));
    Ok(CardReport {
        card_id: card.id.clone(),
        prompt,
        assessment,
        retrieved: hits.into_iter().map(|(e, _)| e.id).collect(),
        matched,
    })
}
