//! MOBIL lane-change criterion.

use serde::{Deserialize, Serialize};

use super::idm::idm_acceleration_raw;
use super::world::{LaneDirection, VehicleState, WorldState};
use super::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilParams {
    /// Weight given to the acceleration changes of neighbors, in [0, 1].
    pub politeness: f64,
    /// Minimum net gain (m/s²) required to change.
    pub threshold: f64,
    /// Largest deceleration (m/s²) the new follower may be forced into.
    pub max_imposed_braking: f64,
}

impl Default for MobilParams {
    fn default() -> Self {
        Self {
            politeness: 0.3,
            threshold: 0.2,
            max_imposed_braking: 4.0,
        }
    }
}

impl MobilParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.politeness) {
            return Err(SimError::InvalidParams(format!(
                "mobil.politeness must lie in [0, 1], got {}",
                self.politeness
            )));
        }
        if !(self.threshold > 0.0 && self.max_imposed_braking > 0.0) {
            return Err(SimError::InvalidParams(
                "mobil.threshold and mobil.max_imposed_braking must be strictly positive".into(),
            ));
        }
        Ok(())
    }
}

/// Components of a MOBIL evaluation, exposed for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilAssessment {
    /// False when there is no physical room or the new follower would brake too hard.
    pub safe: bool,
    pub own_gain: f64,
    pub others_gain: f64,
    pub incentive: f64,
}

/// Unclamped IDM acceleration of `follower` behind `leader` (if any). The
/// clamped value bottoms out at exactly the default braking limit, which
/// would make the safety test vacuous.
fn accel_behind(world: &WorldState, follower: &VehicleState, leader: Option<&VehicleState>) -> f64 {
    let params = world.idm_params_for(follower);
    match leader {
        None => idm_acceleration_raw(follower.speed, f64::INFINITY, 0.0, &params),
        Some(l) => idm_acceleration_raw(follower.speed, follower.gap_to(l), l.speed, &params),
    }
    .unwrap_or(f64::NEG_INFINITY)
}

pub fn mobil_assess(
    world: &WorldState,
    vehicle_id: &str,
    direction: LaneDirection,
    m: &MobilParams,
) -> Result<MobilAssessment, SimError> {
    let me = world.vehicle(vehicle_id)?;
    let target = me.lane_index as i64 + direction.offset();
    if !world.road.has_lane(target) {
        return Err(SimError::InvalidLane {
            lane: target,
            lane_count: world.road.lane_count,
        });
    }
    let target = target as usize;
    let pos = me.longitudinal_pos;

    let old_leader = world.leader_in_lane(me.lane_index, pos, &me.id);
    let old_follower = world.follower_in_lane(me.lane_index, pos, &me.id);
    let new_leader = world.leader_in_lane(target, pos, &me.id);
    let new_follower = world.follower_in_lane(target, pos, &me.id);

    let unsafe_result = MobilAssessment {
        safe: false,
        own_gain: 0.0,
        others_gain: 0.0,
        incentive: f64::NEG_INFINITY,
    };
    if new_leader.is_some_and(|l| me.gap_to(l) <= 0.0)
        || new_follower.is_some_and(|f| f.gap_to(me) <= 0.0)
    {
        return Ok(unsafe_result);
    }

    let own_before = accel_behind(world, me, old_leader);
    let own_after = accel_behind(world, me, new_leader);

    let (new_follower_gain, new_follower_after) = match new_follower {
        Some(f) => {
            let before = accel_behind(world, f, new_leader);
            let after = accel_behind(world, f, Some(me));
            (after - before, after)
        }
        None => (0.0, 0.0),
    };
    if new_follower_after < -m.max_imposed_braking {
        return Ok(unsafe_result);
    }
    let old_follower_gain = match old_follower {
        Some(f) => accel_behind(world, f, old_leader) - accel_behind(world, f, Some(me)),
        None => 0.0,
    };

    let own_gain = own_after - own_before;
    let others_gain = new_follower_gain + old_follower_gain;
    Ok(MobilAssessment {
        safe: true,
        own_gain,
        others_gain,
        incentive: own_gain + m.politeness * others_gain,
    })
}

/// Whether `vehicle_id` should move one lane in `direction` under MOBIL.
/// Pure function of the world; nothing is mutated.
pub fn mobil_should_change(
    world: &WorldState,
    vehicle_id: &str,
    direction: LaneDirection,
    m: &MobilParams,
) -> Result<bool, SimError> {
    let a = mobil_assess(world, vehicle_id, direction, m)?;
    Ok(a.safe && a.incentive > m.threshold)
}
