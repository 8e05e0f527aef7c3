//! Forward-rollout safety check for a single meta-action.
//!
//! The ego applies the action (target-speed change or lane change) while every
//! other vehicle holds its speed and lane. The rollout samples the horizon in
//! physics substeps, including t = 0, and tracks the smallest bumper gap and
//! time-to-collision against the vehicles the action brings into play:
//!
//! * longitudinal actions: vehicles strictly ahead in the ego lane;
//! * lane changes: every vehicle in the target lane, ahead or behind
//!   (abreast counts as behind).

use serde::{Deserialize, Serialize};

use super::tools::get_available_actions;
use super::PerceptionError;
use crate::sim::{
    adjusted_target_speed, ego_speed_after_substep, MetaAction, VehicleState, WorldState, SUBSTEP,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyConfig {
    pub horizon: f64,
    pub gap_floor: f64,
    pub ttc_floor: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            horizon: 3.0,
            gap_floor: 2.0,
            ttc_floor: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub action: MetaAction,
    pub safe: bool,
    pub reason: String,
    /// Smallest predicted bumper gap; infinite when nothing is relevant.
    pub min_predicted_gap: f64,
    /// Smallest predicted time-to-collision; infinite when never closing.
    pub time_to_collision: f64,
    /// Vehicle that binds the verdict: the first violator when unsafe,
    /// otherwise the closest relevant vehicle.
    pub affected_vehicle: Option<String>,
}

/// Check with the default horizon and floors.
pub fn check_action_safety(
    world: &WorldState,
    action: MetaAction,
) -> Result<SafetyVerdict, PerceptionError> {
    check_action_safety_with(world, action, &SafetyConfig::default())
}

struct Tracked<'a> {
    vehicle: &'a VehicleState,
    ahead: bool,
}

pub fn check_action_safety_with(
    world: &WorldState,
    action: MetaAction,
    config: &SafetyConfig,
) -> Result<SafetyVerdict, PerceptionError> {
    if !get_available_actions(world).contains(&action) {
        return Err(PerceptionError::ActionUnavailable(action));
    }
    let ego = world.ego();
    let lane = match action.lane_direction() {
        Some(dir) => (ego.lane_index as i64 + dir.offset()) as usize,
        None => ego.lane_index,
    };
    let relevant: Vec<Tracked> = world
        .vehicles
        .iter()
        .filter(|v| !v.is_ego() && v.lane_index == lane)
        .map(|v| Tracked {
            vehicle: v,
            ahead: v.longitudinal_pos > ego.longitudinal_pos,
        })
        .filter(|t| action.is_lane_change() || t.ahead)
        .collect();

    let target = adjusted_target_speed(ego.target_speed, action, world.road.max_ego_speed());
    let max_accel = world.npc_params.idm.max_accel;
    let steps = (config.horizon / SUBSTEP).round() as u64;

    let mut min_gap = f64::INFINITY;
    let mut min_gap_id: Option<&str> = None;
    let mut min_ttc = f64::INFINITY;
    let mut violation: Option<(&str, f64)> = None;

    let (mut pos, mut speed) = (ego.longitudinal_pos, ego.speed);
    for k in 0..=steps {
        let t = k as f64 * SUBSTEP;
        for tr in &relevant {
            let v = tr.vehicle;
            let other_pos = v.longitudinal_pos + v.speed * t;
            let half = (v.length + ego.length) / 2.0;
            let (gap, closing) = if tr.ahead {
                (other_pos - pos - half, speed - v.speed)
            } else {
                (pos - other_pos - half, v.speed - speed)
            };
            let ttc = if gap <= 0.0 {
                0.0
            } else if closing > 0.0 {
                gap / closing
            } else {
                f64::INFINITY
            };
            if gap < min_gap {
                min_gap = gap;
                min_gap_id = Some(&v.id);
            }
            min_ttc = min_ttc.min(ttc);
            if violation.is_none() && (gap < config.gap_floor || ttc < config.ttc_floor) {
                violation = Some((&v.id, t));
            }
        }
        if k < steps {
            let next = ego_speed_after_substep(speed, target, max_accel);
            pos += (speed + next) / 2.0 * SUBSTEP;
            speed = next;
        }
    }

    let safe = violation.is_none();
    let affected = violation
        .map(|(id, _)| id)
        .or(min_gap_id)
        .map(str::to_string);
    let reason = match (&violation, &affected) {
        (Some((id, t)), _) => format!(
            "{action} is unsafe: conflict with {id} within {t:.1} s (min gap {}, time to collision {})",
            fmt_meters(min_gap),
            fmt_seconds(min_ttc)
        ),
        (None, Some(id)) => format!(
            "{action} is safe with {id}: min gap {}, time to collision {}",
            fmt_meters(min_gap),
            fmt_seconds(min_ttc)
        ),
        (None, None) => format!("{action} is safe: no vehicle is affected"),
    };
    Ok(SafetyVerdict {
        action,
        safe,
        reason,
        min_predicted_gap: min_gap,
        time_to_collision: min_ttc,
        affected_vehicle: affected,
    })
}

fn fmt_meters(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.1} m")
    } else {
        "unbounded".to_string()
    }
}

fn fmt_seconds(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.1} s")
    } else {
        "none (not closing)".to_string()
    }
}
