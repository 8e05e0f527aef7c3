//! Prompt assembly for one decision cycle.

use serde::{Deserialize, Serialize};

use crate::memory::MemoryEntry;
use crate::perception::{SceneText, ToolCatalog};
use crate::sim::MetaAction;
use crate::template;

use super::Decision;

/// Versioned text assets used to build agent prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptAssets {
    pub version: String,
    pub driving_rules: String,
    pub response_format: String,
}

impl PromptAssets {
    pub fn v1() -> Self {
        Self {
            version: "v1".into(),
            driving_rules: include_str!("../../prompts/driving_rules_v1.txt").into(),
            response_format: include_str!("../../prompts/response_format_v1.txt").into(),
        }
    }
}

impl Default for PromptAssets {
    fn default() -> Self {
        Self::v1()
    }
}

/// A retrieved memory as it is shown to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryNote {
    pub scenario_summary: String,
    pub proper_decision: String,
}

impl MemoryNote {
    pub fn line(&self) -> String {
        format!(
            "Past experience: in scenario {}, the proper decision was {}",
            self.scenario_summary, self.proper_decision
        )
    }
}

impl From<&MemoryEntry> for MemoryNote {
    fn from(e: &MemoryEntry) -> Self {
        Self {
            scenario_summary: e.scenario_summary.clone(),
            proper_decision: e.proper_decision.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_rules: String,
    pub tool_catalog: String,
    pub scene: SceneText,
    pub previous_decision: Option<Decision>,
    pub retrieved_memories: Vec<MemoryNote>,
    pub scratchpad: String,
    pub response_format: String,
}

impl PromptBundle {
    pub fn new(
        assets: &PromptAssets,
        catalog: &ToolCatalog,
        scene: SceneText,
        previous_decision: Option<Decision>,
        retrieved_memories: Vec<MemoryNote>,
    ) -> Self {
        let names: Vec<&str> = MetaAction::ALL.iter().map(|a| a.name()).collect();
        let response_format = template::render(
            &assets.response_format,
            &[("action_names", &names.join(", "))],
        )
        .expect("bundled response format only uses action_names");
        Self {
            system_rules: assets.driving_rules.clone(),
            tool_catalog: catalog.render(),
            scene,
            previous_decision,
            retrieved_memories,
            scratchpad: String::new(),
            response_format,
        }
    }
}

fn section(out: &mut String, heading: &str, body: &str) {
    out.push_str("## ");
    out.push_str(heading);
    out.push('\n');
    out.push_str(body.trim_end());
    out.push_str("\n\n");
}

/// Sections in fixed order: rules, tools, memories, previous decision,
/// scene, scratchpad, response format. Empty optional sections are left out.
pub fn build_prompt(bundle: &PromptBundle) -> String {
    let mut out = String::new();
    section(&mut out, "Driving rules", &bundle.system_rules);
    section(&mut out, "Tools", &bundle.tool_catalog);
    if !bundle.retrieved_memories.is_empty() {
        let lines: Vec<String> = bundle
            .retrieved_memories
            .iter()
            .map(MemoryNote::line)
            .collect();
        section(&mut out, "Past experience", &lines.join("\n"));
    }
    if let Some(d) = &bundle.previous_decision {
        section(
            &mut out,
            "Previous decision",
            &format!(
                "Previous decision: {}\nExplanation: {}",
                d.action, d.explanation
            ),
        );
    }
    section(&mut out, "Current scene", &bundle.scene.text);
    if !bundle.scratchpad.is_empty() {
        section(&mut out, "Reasoning so far", &bundle.scratchpad);
    }
    section(&mut out, "Response format", &bundle.response_format);
    out.truncate(out.trim_end().len());
    out.push('\n');
    out
}
