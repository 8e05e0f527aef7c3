//! Tool catalog and text-level dispatch.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::safety::check_action_safety;
use super::scene::scene_to_text;
use super::tools::{affected_vehicle_by_lane_change, get_available_actions, get_leading_vehicle};
use super::PerceptionError;
use crate::sim::{LaneDirection, MetaAction, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// A lane name such as `lane_2`.
    Lane,
    /// `left` or `right`.
    Direction,
    /// One of the five meta-action names.
    Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolParam {
    pub name: String,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub input_schema: Vec<ToolParam>,
}

impl ToolSpec {
    fn new(name: &str, description: &str, params: &[(&str, ParamKind)]) -> Self {
        Self {
            name: name.to_string(),
            description: description.to_string(),
            input_schema: params
                .iter()
                .map(|(n, k)| ToolParam {
                    name: n.to_string(),
                    kind: *k,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCatalog {
    pub tools: Vec<ToolSpec>,
}

impl Default for ToolCatalog {
    fn default() -> Self {
        Self::standard()
    }
}

impl ToolCatalog {
    pub fn standard() -> Self {
        use ParamKind::*;
        Self {
            tools: vec![
                ToolSpec::new(
                    "get_available_actions",
                    "Lists the meta-actions the ego vehicle can take in the current state.",
                    &[],
                ),
                ToolSpec::new(
                    "get_leading_vehicle",
                    "Returns the nearest vehicle ahead of the ego in a lane, with its bumper gap and speed.",
                    &[("lane", Lane)],
                ),
                ToolSpec::new(
                    "get_lane_change_affected_vehicles",
                    "Names the vehicles that would end up directly ahead of and behind the ego after a lane change.",
                    &[("direction", Direction)],
                ),
                ToolSpec::new(
                    "check_action_safety",
                    "Predicts the next 3 seconds under an action and reports whether gaps and time-to-collision stay safe.",
                    &[("action", Action)],
                ),
                ToolSpec::new(
                    "describe_scene",
                    "Describes every vehicle on the road with its lane, position and speed.",
                    &[],
                ),
            ],
        }
    }

    /// Checks that names are unique and descriptions present.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.tools {
            if !seen.insert(t.name.as_str()) {
                return Err(format!("duplicate tool name `{}`", t.name));
            }
            if t.description.trim().is_empty() {
                return Err(format!("tool `{}` has no description", t.name));
            }
        }
        if self.tools.is_empty() {
            return Err("catalog is empty".into());
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.iter().map(|t| t.name.as_str()).collect()
    }

    /// One line per tool, as injected into prompts.
    pub fn render(&self) -> String {
        self.tools
            .iter()
            .map(|t| {
                let params: Vec<String> = t
                    .input_schema
                    .iter()
                    .map(|p| {
                        let kind = match p.kind {
                            ParamKind::Lane => "lane_<k>",
                            ParamKind::Direction => "left|right",
                            ParamKind::Action => "ACTION_NAME",
                        };
                        format!("{}: {kind}", p.name)
                    })
                    .collect();
                format!("- {}({}): {}", t.name, params.join(", "), t.description)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Run a catalog tool by name against a frozen world.
    pub fn execute(
        &self,
        world: &WorldState,
        name: &str,
        input: &str,
    ) -> Result<String, PerceptionError> {
        let spec = self
            .get(name)
            .ok_or_else(|| PerceptionError::UnknownTool(name.to_string()))?;
        execute_tool(world, spec, input)
    }
}

/// Parse `input` as either a JSON object or a bare value for the tool's only parameter.
fn parse_args(spec: &ToolSpec, input: &str) -> Result<BTreeMap<String, String>, PerceptionError> {
    let bad = |reason: String| PerceptionError::BadInput {
        tool: spec.name.clone(),
        reason,
    };
    let trimmed = input.trim();
    let mut args = BTreeMap::new();
    if trimmed.is_empty() || trimmed == "{}" || trimmed.eq_ignore_ascii_case("none") {
        // no arguments
    } else if trimmed.starts_with('{') {
        let obj: BTreeMap<String, serde_json::Value> =
            serde_json::from_str(trimmed).map_err(|e| bad(format!("invalid JSON: {e}")))?;
        for (k, v) in obj {
            let s = match v {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            args.insert(k, s);
        }
    } else {
        match spec.input_schema.as_slice() {
            [only] => {
                args.insert(
                    only.name.clone(),
                    trimmed.trim_matches(|c| c == '"' || c == '\'').to_string(),
                );
            }
            [] => {}
            _ => return Err(bad("expected a JSON object with named parameters".into())),
        }
    }
    for p in &spec.input_schema {
        if !args.contains_key(&p.name) {
            return Err(bad(format!("missing parameter `{}`", p.name)));
        }
    }
    Ok(args)
}

fn parse_lane(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    raw.strip_prefix("lane_").unwrap_or(raw).parse().ok()
}

fn parse_action(raw: &str) -> Option<MetaAction> {
    raw.trim().to_ascii_uppercase().parse().ok()
}

/// Execute a tool and render its result as one line of observation text.
pub fn execute_tool(
    world: &WorldState,
    spec: &ToolSpec,
    input: &str,
) -> Result<String, PerceptionError> {
    let args = parse_args(spec, input)?;
    let bad = |reason: String| PerceptionError::BadInput {
        tool: spec.name.clone(),
        reason,
    };
    let ego = world.ego();
    match spec.name.as_str() {
        "get_available_actions" => {
            let names: Vec<&str> = get_available_actions(world)
                .into_iter()
                .map(MetaAction::name)
                .collect();
            Ok(format!("Available actions: {}", names.join(", ")))
        }
        "get_leading_vehicle" => {
            let raw = &args["lane"];
            let lane = parse_lane(raw).ok_or_else(|| bad(format!("`{raw}` is not a lane name")))?;
            Ok(match get_leading_vehicle(world, lane)? {
                Some(l) => format!(
                    "{} is ahead of {} on lane_{lane}: gap {:.1} m, speed {:.1} m/s",
                    l.id, ego.id, l.gap, l.speed
                ),
                None => format!("No vehicle ahead of {} on lane_{lane}", ego.id),
            })
        }
        "get_lane_change_affected_vehicles" => {
            let raw = &args["direction"];
            let dir: LaneDirection = raw.parse().map_err(bad)?;
            let a = affected_vehicle_by_lane_change(world, dir)?;
            let name = |v: &Option<String>| v.clone().unwrap_or_else(|| "none".to_string());
            Ok(format!(
                "Changing to lane_{} affects new leader {} and new follower {}",
                a.target_lane,
                name(&a.new_leader),
                name(&a.new_follower)
            ))
        }
        "check_action_safety" => {
            let raw = &args["action"];
            let action =
                parse_action(raw).ok_or_else(|| bad(format!("`{raw}` is not an action name")))?;
            Ok(check_action_safety(world, action)?.reason)
        }
        "describe_scene" => Ok(scene_to_text(world).text.replace('\n', " | ")),
        other => Err(PerceptionError::UnknownTool(other.to_string())),
    }
}
