//! Deterministic multi-lane highway simulator.
//!
//! The ego vehicle is driven by discrete [`MetaAction`]s issued once per
//! decision interval (1 s by default). Background vehicles follow IDM
//! longitudinally and consider a MOBIL lane change once per interval. Physics
//! advances in fixed 0.1 s substeps, and every step is a pure function of the
//! input world, so episodes replay bit-exactly.

mod idm;
mod mobil;
mod spawn;
mod step;
mod world;

pub use idm::{idm_acceleration, idm_acceleration_raw, IdmParams};
pub use mobil::{mobil_assess, mobil_should_change, MobilAssessment, MobilParams};
pub use spawn::{
    spawn_scenario, ScenarioConfig, StalledVehicle, EGO_START_POS, EGO_START_SPEED, NPC_SPEED_RANGE,
};
pub use step::{
    adjusted_target_speed, ego_speed_after_substep, step_world, step_world_with, NpcModel,
    SimWarning, StepOutput,
};
pub use world::{
    CollisionEvent, LaneDirection, MetaAction, NpcParams, RoadSpec, UnknownAction, VehicleKind,
    VehicleState, WorldState, VEHICLE_LENGTH, VEHICLE_WIDTH,
};

/// Physics substep, seconds.
pub const SUBSTEP: f64 = 0.1;
/// Default decision interval, seconds.
pub const DECISION_INTERVAL: f64 = 1.0;
/// Target-speed change applied by FASTER / SLOWER, m/s.
pub const TARGET_SPEED_DELTA: f64 = 2.5;
/// The ego may target up to this much above the speed limit, m/s.
pub const EGO_SPEED_MARGIN: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("gap must be positive, got {0}")]
    NonPositiveGap(f64),
    #[error("unknown vehicle `{0}`")]
    UnknownVehicle(String),
    #[error("lane {lane} does not exist on a {lane_count}-lane road")]
    InvalidLane { lane: i64, lane_count: usize },
    #[error("cannot place {requested} vehicles: {reason}")]
    InfeasibleSpawn { requested: usize, reason: String },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("invalid world: {0}")]
    InvalidWorld(String),
}

/// Hand-built worlds for tests and fixtures.
pub mod testing {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::{NpcParams, RoadSpec, VehicleState, WorldState};

    /// A world on a default road with `lane_count` lanes. The first vehicle must be the ego.
    pub fn world_with(lane_count: usize, vehicles: Vec<VehicleState>) -> WorldState {
        WorldState {
            tick: 0,
            road: RoadSpec {
                lane_count,
                ..RoadSpec::default()
            },
            vehicles,
            rng_state: ChaCha8Rng::seed_from_u64(0),
            npc_params: NpcParams::default(),
        }
    }
}
