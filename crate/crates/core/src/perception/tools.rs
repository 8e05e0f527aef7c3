use serde::{Deserialize, Serialize};

use super::PerceptionError;
use crate::sim::{LaneDirection, MetaAction, WorldState};

/// Actions the ego may take, in canonical order.
pub fn get_available_actions(world: &WorldState) -> Vec<MetaAction> {
    let lane = world.ego().lane_index;
    let lanes = world.road.lane_count;
    MetaAction::ALL
        .into_iter()
        .filter(|a| match a {
            MetaAction::LaneLeft => lane > 0,
            MetaAction::LaneRight => lane + 1 < lanes,
            _ => true,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadingVehicle {
    pub id: String,
    /// Bumper-to-bumper distance from the ego.
    pub gap: f64,
    pub speed: f64,
}

fn check_lane(world: &WorldState, lane: i64) -> Result<usize, PerceptionError> {
    if world.road.has_lane(lane) {
        Ok(lane as usize)
    } else {
        Err(PerceptionError::InvalidLane {
            lane,
            lane_count: world.road.lane_count,
        })
    }
}

/// Nearest vehicle in `lane` strictly ahead of the ego's position.
pub fn get_leading_vehicle(
    world: &WorldState,
    lane: i64,
) -> Result<Option<LeadingVehicle>, PerceptionError> {
    let lane = check_lane(world, lane)?;
    let ego = world.ego();
    Ok(world
        .leader_in_lane(lane, ego.longitudinal_pos, &ego.id)
        .map(|v| LeadingVehicle {
            id: v.id.clone(),
            gap: ego.gap_to(v),
            speed: v.speed,
        }))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AffectedVehicles {
    pub target_lane: usize,
    pub new_leader: Option<String>,
    pub new_follower: Option<String>,
}

/// Vehicles the ego would end up between after changing lanes.
/// A vehicle exactly abreast of the ego counts as the new follower.
pub fn affected_vehicle_by_lane_change(
    world: &WorldState,
    direction: LaneDirection,
) -> Result<AffectedVehicles, PerceptionError> {
    let ego = world.ego();
    let target = check_lane(world, ego.lane_index as i64 + direction.offset())?;
    Ok(AffectedVehicles {
        target_lane: target,
        new_leader: world
            .leader_in_lane(target, ego.longitudinal_pos, &ego.id)
            .map(|v| v.id.clone()),
        new_follower: world
            .follower_in_lane(target, ego.longitudinal_pos, &ego.id)
            .map(|v| v.id.clone()),
    })
}
