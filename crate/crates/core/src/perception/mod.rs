//! Perception tools the agent calls during its reasoning loop.
//!
//! Every tool is a pure function of a frozen [`WorldState`](crate::sim::WorldState)
//! snapshot. Results are rendered as compact one-line observations for the
//! language model; the typed values are available to the oracle and planners.

mod catalog;
mod safety;
mod scene;
mod tools;

pub use catalog::{execute_tool, ParamKind, ToolCatalog, ToolParam, ToolSpec};
pub use safety::{check_action_safety, check_action_safety_with, SafetyConfig, SafetyVerdict};
pub use scene::{scene_to_text, SceneText, SCENE_SCHEMA_VERSION};
pub use tools::{
    affected_vehicle_by_lane_change, get_available_actions, get_leading_vehicle, AffectedVehicles,
    LeadingVehicle,
};

use crate::sim::MetaAction;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PerceptionError {
    #[error("lane_{lane} does not exist (road has {lane_count} lanes)")]
    InvalidLane { lane: i64, lane_count: usize },
    #[error("{0} is not available in the current state")]
    ActionUnavailable(MetaAction),
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("bad input for {tool}: {reason}")]
    BadInput { tool: String, reason: String },
}
