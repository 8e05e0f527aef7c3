//! Re-execution of recorded episodes against the simulator.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::episode::{read_episode, EpisodeRecord};
use super::HarnessError;
use crate::sim::{spawn_scenario, step_world, WorldState, DECISION_INTERVAL};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    /// Index of the snapshot that differs; `steps` means the final world.
    pub step: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub episode_id: String,
    pub snapshots_checked: usize,
    pub divergence: Option<Divergence>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.divergence.is_none()
    }
}

fn json(w: &WorldState) -> serde_json::Value {
    serde_json::to_value(w).expect("world serializes")
}

/// First differing field path between two JSON values.
fn first_diff(path: &str, a: &serde_json::Value, b: &serde_json::Value) -> Option<String> {
    use serde_json::Value::*;
    match (a, b) {
        (Object(x), Object(y)) => {
            for (k, va) in x {
                let p = format!("{path}.{k}");
                match y.get(k) {
                    None => return Some(format!("{p} missing from recording")),
                    Some(vb) => {
                        if let Some(d) = first_diff(&p, va, vb) {
                            return Some(d);
                        }
                    }
                }
            }
            y.keys()
                .find(|k| !x.contains_key(*k))
                .map(|k| format!("{path}.{k} unexpected in recording"))
        }
        (Array(x), Array(y)) => {
            for (i, (va, vb)) in x.iter().zip(y).enumerate() {
                if let Some(d) = first_diff(&format!("{path}[{i}]"), va, vb) {
                    return Some(d);
                }
            }
            (x.len() != y.len())
                .then(|| format!("{path} has {} items, recording has {}", x.len(), y.len()))
        }
        // Compare numbers by their exact text so -0.0 and 0.0 differ too.
        _ if a.to_string() == b.to_string() => None,
        _ => Some(format!("{path}: expected {a}, recorded {b}")),
    }
}

fn compare(step: usize, expected: &WorldState, recorded: &WorldState) -> Option<Divergence> {
    first_diff("world", &json(expected), &json(recorded)).map(|detail| Divergence { step, detail })
}

/// Check every recorded snapshot against a fresh simulation driven by the
/// recorded decisions.
pub fn replay_record(record: &EpisodeRecord) -> Result<ReplayReport, HarnessError> {
    let h = &record.header;
    let mut world = spawn_scenario(&h.config.scenario.with_seed(h.seed))?;
    let mut checked = 0;
    let report = |checked, divergence| ReplayReport {
        episode_id: h.episode_id.clone(),
        snapshots_checked: checked,
        divergence,
    };
    for step in &record.steps {
        checked += 1;
        if let Some(d) = compare(step.index, &world, &step.world) {
            return Ok(report(checked, Some(d)));
        }
        let out = step_world(&world, step.decision.action, DECISION_INTERVAL);
        if out.applied_action != step.applied_action {
            return Ok(report(
                checked,
                Some(Divergence {
                    step: step.index,
                    detail: format!(
                        "applied action {} but recording has {}",
                        out.applied_action, step.applied_action
                    ),
                }),
            ));
        }
        world = out.world;
    }
    if let Some(o) = &record.outcome {
        checked += 1;
        if let Some(d) = compare(record.steps.len(), &world, &o.final_world) {
            return Ok(report(checked, Some(d)));
        }
    }
    Ok(report(checked, None))
}

pub fn replay(path: &Path) -> Result<ReplayReport, HarnessError> {
    replay_record(&read_episode(path)?)
}
