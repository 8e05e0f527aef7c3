//! Road, vehicle and world-state types.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::idm::IdmParams;
use super::mobil::MobilParams;
use super::{SimError, SUBSTEP};

/// Default vehicle length in meters.
pub const VEHICLE_LENGTH: f64 = 5.0;
/// Default vehicle width in meters.
pub const VEHICLE_WIDTH: f64 = 2.0;

/// Straight multi-lane road. Lane 0 is the leftmost lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoadSpec {
    pub lane_count: usize,
    pub lane_width: f64,
    pub length: f64,
    pub speed_limit: f64,
}

impl Default for RoadSpec {
    fn default() -> Self {
        Self {
            lane_count: 4,
            lane_width: 4.0,
            length: 2000.0,
            speed_limit: 30.0,
        }
    }
}

impl RoadSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.lane_count == 0 {
            return Err(SimError::InvalidParams(
                "lane_count must be at least 1".into(),
            ));
        }
        for (name, value) in [
            ("lane_width", self.lane_width),
            ("length", self.length),
            ("speed_limit", self.speed_limit),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(SimError::InvalidParams(format!(
                    "{name} must be strictly positive, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Upper bound on the ego target speed.
    pub fn max_ego_speed(&self) -> f64 {
        self.speed_limit + super::EGO_SPEED_MARGIN
    }

    pub fn has_lane(&self, lane: i64) -> bool {
        lane >= 0 && (lane as usize) < self.lane_count
    }
}

/// The five discrete driving decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MetaAction {
    LaneLeft,
    Idle,
    LaneRight,
    Faster,
    Slower,
}

impl MetaAction {
    /// Canonical order, used wherever actions are listed or tie-broken.
    pub const ALL: [MetaAction; 5] = [
        MetaAction::LaneLeft,
        MetaAction::Idle,
        MetaAction::LaneRight,
        MetaAction::Faster,
        MetaAction::Slower,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetaAction::LaneLeft => "LANE_LEFT",
            MetaAction::Idle => "IDLE",
            MetaAction::LaneRight => "LANE_RIGHT",
            MetaAction::Faster => "FASTER",
            MetaAction::Slower => "SLOWER",
        }
    }

    pub fn is_lane_change(self) -> bool {
        matches!(self, MetaAction::LaneLeft | MetaAction::LaneRight)
    }

    pub fn lane_direction(self) -> Option<LaneDirection> {
        match self {
            MetaAction::LaneLeft => Some(LaneDirection::Left),
            MetaAction::LaneRight => Some(LaneDirection::Right),
            _ => None,
        }
    }
}

impl fmt::Display for MetaAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Error returned when a token is not exactly one of the five action names.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("`{0}` is not a meta-action name")]
pub struct UnknownAction(pub String);

impl FromStr for MetaAction {
    type Err = UnknownAction;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetaAction::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| UnknownAction(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaneDirection {
    Left,
    Right,
}

impl LaneDirection {
    /// Signed lane-index offset.
    pub fn offset(self) -> i64 {
        match self {
            LaneDirection::Left => -1,
            LaneDirection::Right => 1,
        }
    }

    pub fn as_action(self) -> MetaAction {
        match self {
            LaneDirection::Left => MetaAction::LaneLeft,
            LaneDirection::Right => MetaAction::LaneRight,
        }
    }
}

impl FromStr for LaneDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" => Ok(LaneDirection::Left),
            "right" => Ok(LaneDirection::Right),
            other => Err(format!("`{other}` is not a lane direction (left|right)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleKind {
    Ego,
    Npc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: String,
    pub kind: VehicleKind,
    pub lane_index: usize,
    /// Center position along the road, meters.
    pub longitudinal_pos: f64,
    /// Offset from the center of `lane_index`; nonzero only while changing lanes.
    pub lateral_offset: f64,
    pub speed: f64,
    pub target_speed: f64,
    pub length: f64,
    pub width: f64,
}

impl VehicleState {
    pub fn new(
        id: impl Into<String>,
        kind: VehicleKind,
        lane_index: usize,
        pos: f64,
        speed: f64,
    ) -> Self {
        Self {
            id: id.into(),
            kind,
            lane_index,
            longitudinal_pos: pos,
            lateral_offset: 0.0,
            speed,
            target_speed: speed,
            length: VEHICLE_LENGTH,
            width: VEHICLE_WIDTH,
        }
    }

    pub fn is_ego(&self) -> bool {
        self.kind == VehicleKind::Ego
    }

    /// A background vehicle with zero target speed stands still.
    pub fn is_stalled(&self) -> bool {
        self.kind == VehicleKind::Npc && self.target_speed <= 0.0 && self.speed <= 0.0
    }

    /// Lateral position of the vehicle center, measured from the center of lane 0.
    pub fn lateral_pos(&self, lane_width: f64) -> f64 {
        self.lane_index as f64 * lane_width + self.lateral_offset
    }

    /// Bumper-to-bumper distance from `self` (behind) to `front`.
    pub fn gap_to(&self, front: &VehicleState) -> f64 {
        front.longitudinal_pos - self.longitudinal_pos - (self.length + front.length) / 2.0
    }

    /// Axis-aligned rectangle overlap in (longitudinal, lateral) coordinates.
    pub fn overlaps(&self, other: &VehicleState, lane_width: f64) -> bool {
        let ds = (self.longitudinal_pos - other.longitudinal_pos).abs();
        let dy = (self.lateral_pos(lane_width) - other.lateral_pos(lane_width)).abs();
        ds < (self.length + other.length) / 2.0 && dy < (self.width + other.width) / 2.0
    }

    /// True when the lateral extents of the two vehicles intersect.
    pub fn shares_lateral_span(&self, other: &VehicleState, lane_width: f64) -> bool {
        let dy = (self.lateral_pos(lane_width) - other.lateral_pos(lane_width)).abs();
        dy < (self.width + other.width) / 2.0
    }
}

/// Background-traffic driver parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NpcParams {
    pub idm: IdmParams,
    pub mobil: MobilParams,
}

impl NpcParams {
    pub fn validate(&self) -> Result<(), SimError> {
        self.idm.validate()?;
        self.mobil.validate()
    }
}

/// Complete simulator state. The ego vehicle is always `vehicles[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    /// Elapsed physics substeps since spawn.
    pub tick: u64,
    pub road: RoadSpec,
    pub vehicles: Vec<VehicleState>,
    pub rng_state: ChaCha8Rng,
    pub npc_params: NpcParams,
}

impl WorldState {
    pub fn time(&self) -> f64 {
        self.tick as f64 * SUBSTEP
    }

    pub fn ego(&self) -> &VehicleState {
        &self.vehicles[0]
    }

    pub fn ego_mut(&mut self) -> &mut VehicleState {
        &mut self.vehicles[0]
    }

    pub fn vehicle(&self, id: &str) -> Result<&VehicleState, SimError> {
        self.vehicles
            .iter()
            .find(|v| v.id == id)
            .ok_or_else(|| SimError::UnknownVehicle(id.to_string()))
    }

    /// IDM parameters a vehicle drives with: NPCs aim for their own target speed,
    /// the ego is judged against the configured desired speed.
    pub fn idm_params_for(&self, vehicle: &VehicleState) -> IdmParams {
        match vehicle.kind {
            VehicleKind::Ego => self.npc_params.idm.clone(),
            VehicleKind::Npc => IdmParams {
                desired_speed: vehicle.target_speed.max(f64::MIN_POSITIVE),
                ..self.npc_params.idm.clone()
            },
        }
    }

    /// Nearest vehicle in `lane` strictly ahead of `pos`, ignoring `exclude`.
    pub fn leader_in_lane(&self, lane: usize, pos: f64, exclude: &str) -> Option<&VehicleState> {
        self.vehicles
            .iter()
            .filter(|v| v.id != exclude && v.lane_index == lane && v.longitudinal_pos > pos)
            .min_by(|a, b| a.longitudinal_pos.total_cmp(&b.longitudinal_pos))
    }

    /// Nearest vehicle in `lane` at or behind `pos`, ignoring `exclude`.
    /// Vehicles exactly abreast count as followers.
    pub fn follower_in_lane(&self, lane: usize, pos: f64, exclude: &str) -> Option<&VehicleState> {
        self.vehicles
            .iter()
            .filter(|v| v.id != exclude && v.lane_index == lane && v.longitudinal_pos <= pos)
            .max_by(|a, b| a.longitudinal_pos.total_cmp(&b.longitudinal_pos))
    }

    /// Checks the structural invariants of the world.
    pub fn validate(&self) -> Result<(), SimError> {
        self.road.validate()?;
        self.npc_params.validate()?;
        let egos = self.vehicles.iter().filter(|v| v.is_ego()).count();
        if egos != 1 || !self.vehicles.first().is_some_and(|v| v.is_ego()) {
            return Err(SimError::InvalidWorld(
                "exactly one ego vehicle, listed first, is required".into(),
            ));
        }
        let mut ids: Vec<&str> = self.vehicles.iter().map(|v| v.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(SimError::InvalidWorld("vehicle ids must be unique".into()));
        }
        for v in &self.vehicles {
            if v.lane_index >= self.road.lane_count {
                return Err(SimError::InvalidLane {
                    lane: v.lane_index as i64,
                    lane_count: self.road.lane_count,
                });
            }
            if !(v.speed >= 0.0 && v.speed.is_finite()) {
                return Err(SimError::InvalidWorld(format!(
                    "{} has invalid speed {}",
                    v.id, v.speed
                )));
            }
            if v.lateral_offset.abs() > self.road.lane_width {
                return Err(SimError::InvalidWorld(format!(
                    "{} is outside its lane",
                    v.id
                )));
            }
            if !(0.0..=self.road.length).contains(&v.longitudinal_pos) {
                return Err(SimError::InvalidWorld(format!("{} is off the road", v.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub time: f64,
    pub vehicle_a: String,
    pub vehicle_b: String,
    pub relative_speed: f64,
}

impl CollisionEvent {
    pub fn involves(&self, id: &str) -> bool {
        self.vehicle_a == id || self.vehicle_b == id
    }
}
