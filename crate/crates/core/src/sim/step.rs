//! Closed-loop world advancement.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::idm::idm_acceleration;
use super::mobil::mobil_should_change;
use super::world::{
    CollisionEvent, LaneDirection, MetaAction, VehicleKind, VehicleState, WorldState,
};
use super::{SUBSTEP, TARGET_SPEED_DELTA};

/// How background traffic moves during a step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NpcModel {
    /// IDM longitudinally, MOBIL once per decision interval.
    #[default]
    Idm,
    /// Hold speed and lane.
    ConstantSpeed,
}

/// Non-fatal conditions raised while stepping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimWarning {
    /// The requested lane change points off the road; IDLE was applied instead.
    ActionDegraded { time: f64, requested: MetaAction },
    /// The ego reached the far end of the road and was held there.
    EgoReachedRoadEnd { time: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub world: WorldState,
    pub collisions: Vec<CollisionEvent>,
    pub warnings: Vec<SimWarning>,
    /// The ego action that was actually applied.
    pub applied_action: MetaAction,
}

/// Ego speed update for one substep: track `target` at up to ±`max_accel`.
pub fn ego_speed_after_substep(speed: f64, target: f64, max_accel: f64) -> f64 {
    let accel = ((target - speed) / SUBSTEP).clamp(-max_accel, max_accel);
    (speed + accel * SUBSTEP).max(0.0)
}

/// New ego target speed after a longitudinal meta-action.
pub fn adjusted_target_speed(current: f64, action: MetaAction, max_speed: f64) -> f64 {
    let delta = match action {
        MetaAction::Faster => TARGET_SPEED_DELTA,
        MetaAction::Slower => -TARGET_SPEED_DELTA,
        _ => 0.0,
    };
    (current + delta).clamp(0.0, max_speed)
}

/// Advance the world by `dt_decision` seconds with IDM/MOBIL background traffic.
pub fn step_world(world: &WorldState, ego_action: MetaAction, dt_decision: f64) -> StepOutput {
    step_world_with(world, ego_action, dt_decision, NpcModel::Idm)
}

fn start_lane_change(v: &mut VehicleState, direction: LaneDirection, lane_width: f64) {
    let target = (v.lane_index as i64 + direction.offset()) as usize;
    // Keep the physical lateral position; the offset decays to zero over the interval.
    v.lateral_offset += (v.lane_index as f64 - target as f64) * lane_width;
    v.lane_index = target;
}

pub fn step_world_with(
    world: &WorldState,
    ego_action: MetaAction,
    dt_decision: f64,
    npc_model: NpcModel,
) -> StepOutput {
    let mut next = world.clone();
    let mut warnings = Vec::new();
    let lane_width = next.road.lane_width;
    let max_accel = next.npc_params.idm.max_accel;

    let mut applied_action = ego_action;
    match ego_action.lane_direction() {
        Some(dir) => {
            let target = next.ego().lane_index as i64 + dir.offset();
            if next.road.has_lane(target) {
                start_lane_change(next.ego_mut(), dir, lane_width);
            } else {
                applied_action = MetaAction::Idle;
                warnings.push(SimWarning::ActionDegraded {
                    time: next.time(),
                    requested: ego_action,
                });
            }
        }
        None => {
            let max_speed = next.road.max_ego_speed();
            let ego = next.ego_mut();
            ego.target_speed = adjusted_target_speed(ego.target_speed, ego_action, max_speed);
        }
    }

    if npc_model == NpcModel::Idm {
        let mobil = next.npc_params.mobil.clone();
        for i in 1..next.vehicles.len() {
            if next.vehicles[i].is_stalled() {
                continue;
            }
            let id = next.vehicles[i].id.clone();
            let chosen = [LaneDirection::Left, LaneDirection::Right]
                .into_iter()
                .find(|&dir| {
                    let target = next.vehicles[i].lane_index as i64 + dir.offset();
                    next.road.has_lane(target)
                        && mobil_should_change(&next, &id, dir, &mobil).unwrap_or(false)
                });
            if let Some(dir) = chosen {
                start_lane_change(&mut next.vehicles[i], dir, lane_width);
            }
        }
    }

    let n_sub = if dt_decision > 0.0 {
        ((dt_decision / SUBSTEP).round() as u64).max(1)
    } else {
        0
    };
    // Per-vehicle lateral offset removed each substep, kept aligned with `vehicles`.
    let mut lateral_rates: Vec<f64> = next
        .vehicles
        .iter()
        .map(|v| v.lateral_offset / n_sub.max(1) as f64)
        .collect();

    let mut reported: BTreeSet<(String, String)> = BTreeSet::new();
    let mut collisions = Vec::new();

    for k in 0..n_sub {
        let accels: Vec<f64> = next
            .vehicles
            .iter()
            .map(|v| match (v.kind, npc_model) {
                (VehicleKind::Ego, _) | (VehicleKind::Npc, NpcModel::ConstantSpeed) => 0.0,
                (VehicleKind::Npc, NpcModel::Idm) => npc_acceleration(&next, v),
            })
            .collect();

        let last = k + 1 == n_sub;
        for (i, v) in next.vehicles.iter_mut().enumerate() {
            let new_speed = match v.kind {
                VehicleKind::Ego => ego_speed_after_substep(v.speed, v.target_speed, max_accel),
                VehicleKind::Npc => (v.speed + accels[i] * SUBSTEP).max(0.0),
            };
            v.longitudinal_pos += (v.speed + new_speed) / 2.0 * SUBSTEP;
            v.speed = new_speed;
            v.lateral_offset = if last {
                0.0
            } else {
                v.lateral_offset - lateral_rates[i]
            };
        }
        next.tick += 1;
        let now = next.time();

        for i in 0..next.vehicles.len() {
            for j in (i + 1)..next.vehicles.len() {
                let (a, b) = (&next.vehicles[i], &next.vehicles[j]);
                if a.overlaps(b, lane_width) && reported.insert(ordered_pair(&a.id, &b.id)) {
                    collisions.push(CollisionEvent {
                        time: now,
                        vehicle_a: a.id.clone(),
                        vehicle_b: b.id.clone(),
                        relative_speed: (a.speed - b.speed).abs(),
                    });
                }
            }
        }

        let length = next.road.length;
        let keep: Vec<bool> = next
            .vehicles
            .iter()
            .map(|v| v.is_ego() || v.longitudinal_pos <= length)
            .collect();
        if keep.iter().any(|k| !k) {
            let mut flags = keep.iter();
            next.vehicles.retain(|_| *flags.next().unwrap());
            let mut flags = keep.iter();
            lateral_rates.retain(|_| *flags.next().unwrap());
        }
        let ego = next.ego_mut();
        if ego.longitudinal_pos > length {
            ego.longitudinal_pos = length;
            if !warnings
                .iter()
                .any(|w| matches!(w, SimWarning::EgoReachedRoadEnd { .. }))
            {
                warnings.push(SimWarning::EgoReachedRoadEnd { time: now });
            }
        }
    }

    StepOutput {
        world: next,
        collisions,
        warnings,
        applied_action,
    }
}

fn ordered_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// IDM acceleration for a background vehicle, following whichever vehicle ahead
/// shares its lane or overlaps it laterally.
fn npc_acceleration(world: &WorldState, v: &VehicleState) -> f64 {
    if v.is_stalled() {
        return 0.0;
    }
    let lane_width = world.road.lane_width;
    let params = world.idm_params_for(v);
    let leader = world
        .vehicles
        .iter()
        .filter(|o| {
            o.id != v.id
                && o.longitudinal_pos > v.longitudinal_pos
                && (o.lane_index == v.lane_index || o.shares_lateral_span(v, lane_width))
        })
        .min_by(|a, b| a.longitudinal_pos.total_cmp(&b.longitudinal_pos));
    match leader {
        None => idm_acceleration(v.speed, f64::INFINITY, 0.0, &params),
        Some(l) => idm_acceleration(v.speed, v.gap_to(l), l.speed, &params),
    }
    .unwrap_or(-params.max_braking())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::testing::world_with;
    use crate::sim::{spawn_scenario, ScenarioConfig, DECISION_INTERVAL};
    use proptest::prelude::*;

    fn ego(lane: usize, pos: f64, speed: f64) -> VehicleState {
        VehicleState::new("ego", VehicleKind::Ego, lane, pos, speed)
    }

    fn npc(id: &str, lane: usize, pos: f64, speed: f64) -> VehicleState {
        VehicleState::new(id, VehicleKind::Npc, lane, pos, speed)
    }

    #[test]
    fn lone_ego_idle_moves_at_constant_speed() {
        let w = world_with(3, vec![ego(1, 100.0, 25.0)]);
        let out = step_world(&w, MetaAction::Idle, DECISION_INTERVAL);
        let e = out.world.ego();
        assert!((e.longitudinal_pos - 125.0).abs() < 1e-9);
        assert_eq!(e.speed, 25.0);
        assert!(out.collisions.is_empty() && out.warnings.is_empty());
        assert_eq!(out.world.tick, 10);
        assert!((out.world.time() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overlapping_vehicles_collide_on_first_substep() {
        let w = world_with(2, vec![ego(0, 100.0, 20.0), npc("veh1", 0, 103.0, 20.0)]);
        let out = step_world(&w, MetaAction::Idle, DECISION_INTERVAL);
        assert_eq!(out.collisions.len(), 1);
        let c = &out.collisions[0];
        assert!((c.time - 0.1).abs() < 1e-12);
        assert_eq!(
            (c.vehicle_a.as_str(), c.vehicle_b.as_str()),
            ("ego", "veh1")
        );
    }

    #[test]
    fn stepping_copies_is_deterministic() {
        let w = spawn_scenario(&ScenarioConfig {
            seed: 3,
            ..ScenarioConfig::default()
        })
        .unwrap();
        let a = step_world(&w.clone(), MetaAction::Faster, 1.0);
        let b = step_world(&w.clone(), MetaAction::Faster, 1.0);
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a.world).unwrap(),
            serde_json::to_string(&b.world).unwrap()
        );
    }

    #[test]
    fn lane_left_from_leftmost_degrades_to_idle() {
        let w = world_with(3, vec![ego(0, 100.0, 25.0)]);
        let out = step_world(&w, MetaAction::LaneLeft, 1.0);
        assert_eq!(out.applied_action, MetaAction::Idle);
        assert_eq!(out.world.ego().lane_index, 0);
        assert!(matches!(
            out.warnings[0],
            SimWarning::ActionDegraded {
                requested: MetaAction::LaneLeft,
                ..
            }
        ));
    }

    #[test]
    fn lane_change_completes_in_one_interval() {
        let w = world_with(3, vec![ego(1, 100.0, 25.0)]);
        let out = step_world(&w, MetaAction::LaneRight, 1.0);
        assert_eq!(out.world.ego().lane_index, 2);
        assert_eq!(out.world.ego().lateral_offset, 0.0);
        // Halfway through, the ego sits between the lanes.
        let half = step_world(&w, MetaAction::LaneRight, 0.5);
        assert_eq!(half.world.ego().lateral_offset, 0.0);
        let mut mid = w.clone();
        start_lane_change(mid.ego_mut(), LaneDirection::Right, 4.0);
        assert_eq!(mid.ego().lateral_offset, -4.0);
        assert_eq!(mid.ego().lateral_pos(4.0), 4.0);
    }

    #[test]
    fn faster_raises_target_within_cap() {
        let w = world_with(1, vec![ego(0, 100.0, 32.0)]);
        let mut w = w;
        w.ego_mut().target_speed = 32.0;
        let out = step_world(&w, MetaAction::Faster, 1.0);
        assert_eq!(out.world.ego().target_speed, 33.0);
        assert!((out.world.ego().speed - 33.0).abs() < 1e-9);
        let mut slow = world_with(1, vec![ego(0, 100.0, 1.0)]);
        slow.ego_mut().target_speed = 1.0;
        let out = step_world(&slow, MetaAction::Slower, 1.0);
        assert_eq!(out.world.ego().target_speed, 0.0);
        assert_eq!(out.world.ego().speed, 0.0);
    }

    #[test]
    fn npcs_past_the_end_are_despawned() {
        let w = world_with(2, vec![ego(0, 100.0, 20.0), npc("veh1", 1, 1990.0, 25.0)]);
        let out = step_world(&w, MetaAction::Idle, 1.0);
        assert_eq!(out.world.vehicles.len(), 1);
        out.world.validate().unwrap();
    }

    #[test]
    fn ego_is_held_at_road_end() {
        let w = world_with(1, vec![ego(0, 1990.0, 30.0)]);
        let out = step_world(&w, MetaAction::Idle, 1.0);
        assert_eq!(out.world.ego().longitudinal_pos, 2000.0);
        assert!(matches!(
            out.warnings[0],
            SimWarning::EgoReachedRoadEnd { .. }
        ));
    }

    #[test]
    fn follower_brakes_for_slow_leader() {
        let w = world_with(1, vec![ego(0, 200.0, 5.0), npc("veh1", 0, 170.0, 25.0)]);
        let out = step_world(&w, MetaAction::Idle, 1.0);
        assert!(out.world.vehicle("veh1").unwrap().speed < 25.0);
    }

    #[test]
    fn constant_speed_model_freezes_npcs() {
        let w = world_with(
            2,
            vec![
                ego(0, 200.0, 5.0),
                npc("veh1", 0, 170.0, 25.0),
                npc("veh2", 1, 10.0, 25.0),
            ],
        );
        let out = step_world_with(&w, MetaAction::Idle, 1.0, NpcModel::ConstantSpeed);
        let v = out.world.vehicle("veh1").unwrap();
        assert_eq!(v.speed, 25.0);
        assert_eq!(v.lane_index, 0);
    }

    fn any_action() -> impl Strategy<Value = MetaAction> {
        prop::sample::select(MetaAction::ALL.to_vec())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn invariants_hold_across_steps(seed in 0u64..10_000, actions in prop::collection::vec(any_action(), 1..12)) {
            let cfg = ScenarioConfig { seed, ..ScenarioConfig::default() };
            let mut w = spawn_scenario(&cfg).unwrap();
            let bound = w.npc_params.idm.max_accel.max(w.npc_params.idm.max_braking()) * SUBSTEP + 1e-9;
            for a in actions {
                let ids: Vec<String> = w.vehicles.iter().map(|v| v.id.clone()).collect();
                // Check the kinematic bound substep by substep.
                let mut probe = w.clone();
                for _ in 0..10 {
                    let next = step_world(&probe, a, SUBSTEP).world;
                    for v in &next.vehicles {
                        if let Ok(prev) = probe.vehicle(&v.id) {
                            prop_assert!((v.speed - prev.speed).abs() <= bound);
                        }
                    }
                    probe = next;
                }
                let out = step_world(&w, a, 1.0);
                prop_assert!(out.world.tick > w.tick);
                out.world.validate().unwrap();
                for v in &out.world.vehicles {
                    prop_assert!(ids.contains(&v.id));
                }
                for c in &out.collisions {
                    prop_assert_ne!(&c.vehicle_a, &c.vehicle_b);
                }
                w = out.world;
            }
        }

        #[test]
        fn collision_detection_is_symmetric(ds in -8.0f64..8.0, dy in 0usize..2, off in -4.0f64..4.0) {
            let a = npc("a", 0, 100.0, 10.0);
            let mut b = npc("b", dy, 100.0 + ds, 10.0);
            b.lateral_offset = off;
            prop_assert_eq!(a.overlaps(&b, 4.0), b.overlaps(&a, 4.0));
        }
    }
}
