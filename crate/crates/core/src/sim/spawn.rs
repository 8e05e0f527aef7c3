//! Seeded episode initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::world::{NpcParams, RoadSpec, VehicleKind, VehicleState, WorldState, VEHICLE_LENGTH};
use super::SimError;

pub const EGO_START_POS: f64 = 50.0;
pub const EGO_START_SPEED: f64 = 25.0;
/// Initial NPC speeds are drawn uniformly from this range (m/s).
pub const NPC_SPEED_RANGE: (f64, f64) = (21.0, 27.0);
/// Extra spacing drawn on top of the minimum, divided by the density.
const BASE_EXTRA_SPACING: f64 = 30.0;

/// Scenario descriptor: road geometry, traffic amount and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub road: RoadSpec,
    pub n_npcs: usize,
    /// Traffic density factor (> 0). Larger values pack vehicles closer.
    pub density: f64,
    pub seed: u64,
    pub npc_params: NpcParams,
    /// Stopped vehicles placed after the random traffic.
    pub stalled: Vec<StalledVehicle>,
}

/// A stopped vehicle at a fixed lane and center position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StalledVehicle {
    pub lane: usize,
    pub position: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            road: RoadSpec::default(),
            n_npcs: 8,
            density: 1.0,
            seed: 0,
            npc_params: NpcParams::default(),
            stalled: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// Minimum center-to-center spacing between consecutive vehicles in a lane:
    /// one vehicle length plus a gap of `min_gap + 2·length`.
    pub fn min_spacing(&self) -> f64 {
        VEHICLE_LENGTH + self.npc_params.idm.min_gap + 2.0 * VEHICLE_LENGTH
    }
}

/// Build the initial world. Identical configs give bit-identical worlds.
pub fn spawn_scenario(config: &ScenarioConfig) -> Result<WorldState, SimError> {
    config.road.validate()?;
    config.npc_params.validate()?;
    if !(config.density.is_finite() && config.density > 0.0) {
        return Err(SimError::InvalidParams(format!(
            "density must be strictly positive, got {}",
            config.density
        )));
    }
    let spacing = config.min_spacing();
    let capacity = config.road.lane_count as f64 * config.road.length;
    if config.n_npcs as f64 * spacing > capacity {
        return Err(SimError::InfeasibleSpawn {
            requested: config.n_npcs,
            reason: format!(
                "{} vehicles need {:.1} m of lane length but the road offers {:.1} m",
                config.n_npcs,
                config.n_npcs as f64 * spacing,
                capacity
            ),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lanes = config.road.lane_count;
    let ego_lane = rng.gen_range(0..lanes);
    let mut vehicles = vec![VehicleState::new(
        "ego",
        VehicleKind::Ego,
        ego_lane,
        EGO_START_POS,
        EGO_START_SPEED,
    )];

    // Center of the last vehicle placed in each lane. Other lanes may start
    // slightly behind the ego.
    let mut cursor: Vec<f64> = (0..lanes)
        .map(|l| {
            if l == ego_lane {
                EGO_START_POS
            } else {
                EGO_START_POS - 2.0 * spacing
            }
        })
        .collect();
    let max_extra = BASE_EXTRA_SPACING / config.density;
    for i in 1..=config.n_npcs {
        let lane = rng.gen_range(0..lanes);
        let extra = rng.gen_range(0.0..=max_extra);
        let pos = cursor[lane] + spacing + extra;
        if pos + VEHICLE_LENGTH / 2.0 > config.road.length {
            return Err(SimError::InfeasibleSpawn {
                requested: config.n_npcs,
                reason: format!("vehicle {i} would be placed at {pos:.1} m, past the road end"),
            });
        }
        cursor[lane] = pos;
        let speed = rng.gen_range(NPC_SPEED_RANGE.0..NPC_SPEED_RANGE.1);
        vehicles.push(VehicleState::new(
            format!("veh{i}"),
            VehicleKind::Npc,
            lane,
            pos,
            speed,
        ));
    }

    for (k, s) in config.stalled.iter().enumerate() {
        let mut v = VehicleState::new(
            format!("veh{}", config.n_npcs + 1 + k),
            VehicleKind::Npc,
            s.lane,
            s.position,
            0.0,
        );
        v.target_speed = 0.0;
        if s.lane >= lanes {
            return Err(SimError::InvalidLane {
                lane: s.lane as i64,
                lane_count: lanes,
            });
        }
        if !(0.0..=config.road.length).contains(&s.position) {
            return Err(SimError::InvalidParams(format!(
                "stalled vehicle at {} m is off the road",
                s.position
            )));
        }
        if let Some(o) = vehicles.iter().find(|o| {
            o.lane_index == s.lane && (o.longitudinal_pos - s.position).abs() < VEHICLE_LENGTH
        }) {
            return Err(SimError::InfeasibleSpawn {
                requested: config.n_npcs + config.stalled.len(),
                reason: format!("stalled vehicle at {:.1} m overlaps {}", s.position, o.id),
            });
        }
        vehicles.push(v);
    }

    Ok(WorldState {
        tick: 0,
        road: config.road.clone(),
        vehicles,
        rng_state: rng,
        npc_params: config.npc_params.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(lanes: usize, n_npcs: usize, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            road: RoadSpec {
                lane_count: lanes,
                ..RoadSpec::default()
            },
            n_npcs,
            seed,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn empty_traffic_has_only_ego() {
        let w = spawn_scenario(&config(4, 0, 7)).unwrap();
        assert_eq!(w.vehicles.len(), 1);
        let ego = w.ego();
        assert_eq!(ego.speed, 25.0);
        assert_eq!(ego.longitudinal_pos, 50.0);
        assert!(ego.lane_index < 4);
        w.validate().unwrap();
    }

    #[test]
    fn same_seed_same_world() {
        let a = spawn_scenario(&config(4, 8, 7)).unwrap();
        let b = spawn_scenario(&config(4, 8, 7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = spawn_scenario(&config(4, 8, 8)).unwrap();
        assert_ne!(a.vehicles, c.vehicles);
    }

    #[test]
    fn over_dense_road_is_rejected() {
        // 50 · (5 + 5 + 10) = 1000 m of lane needed, 100 m available.
        let cfg = ScenarioConfig {
            road: RoadSpec {
                lane_count: 1,
                length: 100.0,
                ..RoadSpec::default()
            },
            n_npcs: 50,
            ..ScenarioConfig::default()
        };
        assert!(50.0 * (5.0 + cfg.npc_params.idm.min_gap + 10.0) > 100.0);
        assert!(matches!(
            spawn_scenario(&cfg),
            Err(SimError::InfeasibleSpawn { .. })
        ));
    }

    #[test]
    fn placement_respects_minimum_gaps() {
        for seed in 0..50 {
            let cfg = config(4, 12, seed);
            let w = spawn_scenario(&cfg).unwrap();
            w.validate().unwrap();
            for lane in 0..4 {
                let mut pos: Vec<&VehicleState> =
                    w.vehicles.iter().filter(|v| v.lane_index == lane).collect();
                pos.sort_by(|a, b| a.longitudinal_pos.total_cmp(&b.longitudinal_pos));
                for pair in pos.windows(2) {
                    let gap = pair[0].gap_to(pair[1]);
                    assert!(
                        gap >= cfg.npc_params.idm.min_gap + 2.0 * VEHICLE_LENGTH - 1e-9,
                        "seed {seed} gap {gap}"
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_non_positive_density() {
        let cfg = ScenarioConfig {
            density: 0.0,
            ..ScenarioConfig::default()
        };
        assert!(matches!(
            spawn_scenario(&cfg),
            Err(SimError::InvalidParams(_))
        ));
    }
}
