//! Automated expert, deviation detection and feedback ingestion.

mod service;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use service::{review_router, serve, serve_blocking, ReviewState};

use crate::harness::{EpisodeError, EpisodeStore};
use crate::llm::{hex, ChatBackend};
use crate::memory::{reflect, MemoryBank, MemoryEntry, MemoryError};
use crate::perception::{check_action_safety, get_available_actions, scene_to_text};
use crate::react::{AgentTranscript, Decision};
use crate::sim::{idm_acceleration, mobil_should_change, LaneDirection, MetaAction, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// IDM accelerations beyond ± this value map to FASTER/SLOWER.
    pub accel_threshold: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            accel_threshold: 0.5,
        }
    }
}

pub fn oracle_policy(world: &WorldState) -> MetaAction {
    oracle_policy_with(world, &OracleConfig::default())
}

/// MOBIL lane change (left first) if the safety check approves it, else the
/// sign of the ego's IDM acceleration.
pub fn oracle_policy_with(world: &WorldState, config: &OracleConfig) -> MetaAction {
    let ego = world.ego();
    let available = get_available_actions(world);
    for dir in [LaneDirection::Left, LaneDirection::Right] {
        let action = dir.as_action();
        if !available.contains(&action) {
            continue;
        }
        let wants =
            mobil_should_change(world, &ego.id, dir, &world.npc_params.mobil).unwrap_or(false);
        if wants
            && check_action_safety(world, action)
                .map(|v| v.safe)
                .unwrap_or(false)
        {
            return action;
        }
    }
    let params = world.idm_params_for(ego);
    let accel = match world.leader_in_lane(ego.lane_index, ego.longitudinal_pos, &ego.id) {
        None => idm_acceleration(ego.speed, f64::INFINITY, 0.0, &params),
        Some(l) => idm_acceleration(ego.speed, ego.gap_to(l), l.speed, &params),
    };
    match accel {
        Err(_) => MetaAction::Slower,
        Ok(a) if a > config.accel_threshold => MetaAction::Faster,
        Ok(a) if a < -config.accel_threshold => MetaAction::Slower,
        Ok(_) => MetaAction::Idle,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Author {
    Oracle,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertFeedback {
    pub episode_id: String,
    pub step_index: usize,
    #[serde(default)]
    pub expert_action: Option<MetaAction>,
    #[serde(default)]
    pub advice_text: String,
    pub author: Author,
}

impl ExpertFeedback {
    pub fn validate(&self) -> Result<(), ExpertError> {
        if self.expert_action.is_none() && self.advice_text.trim().is_empty() {
            return Err(ExpertError::InvalidFeedback(
                "feedback needs an expert_action or advice_text".into(),
            ));
        }
        Ok(())
    }

    /// Idempotency key over (episode, step, author, advice).
    pub fn origin_key(&self) -> String {
        let canonical = serde_json::json!([
            self.episode_id,
            self.step_index,
            self.author,
            self.advice_text
        ]);
        hex(&Sha256::digest(canonical.to_string().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviationRecord {
    pub episode_id: String,
    pub step_index: usize,
    pub agent_decision: Decision,
    pub expert_action: MetaAction,
    /// `<episode_id>#<step_index>`: the step record holding the world.
    pub world_snapshot_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advice: Option<String>,
}

/// A record iff the decision differs from the oracle on this world.
pub fn detect_deviation(
    decision: &Decision,
    world: &WorldState,
    episode_id: &str,
    step_index: usize,
) -> Option<DeviationRecord> {
    let expert = oracle_policy(world);
    (decision.action != expert).then(|| DeviationRecord {
        episode_id: episode_id.to_string(),
        step_index,
        agent_decision: decision.clone(),
        expert_action: expert,
        world_snapshot_ref: format!("{episode_id}#{step_index}"),
        advice: None,
    })
}

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error("episode `{0}` not found")]
    EpisodeNotFound(String),
    #[error("step {step} is out of range for an episode with {len} steps")]
    StepOutOfRange { step: usize, len: usize },
    #[error("invalid feedback: {0}")]
    InvalidFeedback(String),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// Transcript for a recorded step; policies without one get a scene-only
/// transcript holding the recorded decision.
pub fn step_transcript(
    world: &WorldState,
    transcript: Option<&AgentTranscript>,
    decision: &Decision,
) -> AgentTranscript {
    transcript.cloned().unwrap_or_else(|| AgentTranscript {
        prompt_version: "none".into(),
        scene: scene_to_text(world),
        steps: Vec::new(),
        decision: Some(decision.clone()),
    })
}

/// Reflect on a recorded step and store the lesson. Returns the entry and
/// whether it is new; a repeated submission returns the existing entry.
pub fn ingest_feedback(
    feedback: &ExpertFeedback,
    store: &EpisodeStore,
    bank: &MemoryBank,
    backend: &dyn ChatBackend,
) -> Result<(MemoryEntry, bool), ExpertError> {
    feedback.validate()?;
    let episode = store
        .load(&feedback.episode_id)?
        .ok_or_else(|| ExpertError::EpisodeNotFound(feedback.episode_id.clone()))?;
    let step = episode
        .steps
        .get(feedback.step_index)
        .ok_or(ExpertError::StepOutOfRange {
            step: feedback.step_index,
            len: episode.steps.len(),
        })?;
    let transcript = step_transcript(&step.world, step.transcript.as_ref(), &step.decision);
    bank.get_or_insert_with(&feedback.origin_key(), || {
        reflect(&transcript, feedback, backend).map_err(ExpertError::from)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::testing::world_with;
    use crate::sim::{IdmParams, VehicleKind, VehicleState};

    fn ego(lane: usize, pos: f64, speed: f64) -> VehicleState {
        VehicleState::new("ego", VehicleKind::Ego, lane, pos, speed)
    }
    fn npc(id: &str, lane: usize, pos: f64, speed: f64) -> VehicleState {
        VehicleState::new(id, VehicleKind::Npc, lane, pos, speed)
    }

    #[test]
    fn empty_road_below_target_is_faster() {
        assert_eq!(
            oracle_policy(&world_with(3, vec![ego(1, 100.0, 20.0)])),
            MetaAction::Faster
        );
    }

    #[test]
    fn at_desired_speed_with_room_is_idle() {
        let w = world_with(1, vec![ego(0, 100.0, 30.0), npc("veh1", 0, 400.0, 30.0)]);
        assert_eq!(oracle_policy(&w), MetaAction::Idle);
    }

    #[test]
    fn close_slow_leader_with_blocked_neighbors_is_slower() {
        // 8 m bumper gap to a 20 m/s leader at 25 m/s. Hand value:
        // s* = 5 + 37.5 + 25·5/(2√6) = 68.02, a = 3(1 − 0.4823 − 72.3) ≈ −215.3.
        let p = IdmParams::default();
        let s_star = 5.0 + 25.0 * 1.5 + 25.0 * 5.0 / (2.0 * 6.0f64.sqrt());
        let a = 3.0 * (1.0 - (25.0f64 / 30.0).powi(4) - (s_star / 8.0).powi(2));
        assert!((s_star - 68.0155).abs() < 1e-3 && a < -0.5);
        assert!((p.desired_gap(25.0, 5.0) - s_star).abs() < 1e-12);
        let w = world_with(
            3,
            vec![
                ego(1, 100.0, 25.0),
                npc("veh1", 1, 113.0, 20.0),
                npc("veh2", 0, 100.0, 25.0),
                npc("veh3", 2, 100.0, 25.0),
            ],
        );
        assert_eq!(oracle_policy(&w), MetaAction::Slower);
    }

    #[test]
    fn output_is_available_and_safe_when_changing_lanes() {
        for seed in 0..200 {
            let w = crate::sim::spawn_scenario(&crate::sim::ScenarioConfig {
                seed,
                ..Default::default()
            })
            .unwrap();
            let a = oracle_policy(&w);
            assert!(get_available_actions(&w).contains(&a));
            if a.is_lane_change() {
                assert!(check_action_safety(&w, a).unwrap().safe);
            }
            assert_eq!(a, oracle_policy(&w.clone()));
        }
    }

    #[test]
    fn deviation_only_on_disagreement() {
        let w = world_with(1, vec![ego(0, 100.0, 30.0)]);
        let d = |action| Decision {
            action,
            explanation: "x".into(),
            step_count: 1,
            fallback: false,
        };
        assert!(detect_deviation(&d(MetaAction::Idle), &w, "ep", 0).is_none());
        let r = detect_deviation(&d(MetaAction::Faster), &w, "ep", 3).unwrap();
        assert_eq!(r.expert_action, MetaAction::Idle);
        assert_eq!(r.world_snapshot_ref, "ep#3");
    }

    #[test]
    fn feedback_validation_and_key() {
        let f = ExpertFeedback {
            episode_id: "ep".into(),
            step_index: 0,
            expert_action: None,
            advice_text: " ".into(),
            author: Author::Human,
        };
        assert!(f.validate().is_err());
        let g = ExpertFeedback {
            advice_text: "keep going".into(),
            ..f.clone()
        };
        assert!(g.validate().is_ok());
        assert_ne!(
            g.origin_key(),
            ExpertFeedback {
                author: Author::Oracle,
                ..g.clone()
            }
            .origin_key()
        );
    }
}
