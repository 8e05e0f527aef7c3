use serde::{Deserialize, Serialize};

use crate::sim::WorldState;

pub const SCENE_SCHEMA_VERSION: u32 = 1;

/// Structured textual description of a world snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneText {
    pub text: String,
    pub vehicle_count: usize,
    pub schema_version: u32,
}

/// One header line, then one line per vehicle with the ego first.
pub fn scene_to_text(world: &WorldState) -> SceneText {
    let n = world.road.lane_count;
    let mut lines = Vec::with_capacity(world.vehicles.len() + 1);
    lines.push(if n == 1 {
        "Highway with 1 lane, named lane_0.".to_string()
    } else {
        format!(
            "Highway with {n} lanes, named lane_0 (leftmost) to lane_{} (rightmost).",
            n - 1
        )
    });
    for v in &world.vehicles {
        let mut line = format!(
            "{}: lane_{}, position {:.1} m, speed {:.1} m/s",
            v.id, v.lane_index, v.longitudinal_pos, v.speed
        );
        if v.is_ego() {
            line.push_str(" (ego)");
        }
        lines.push(line);
    }
    SceneText {
        text: lines.join("\n"),
        vehicle_count: world.vehicles.len(),
        schema_version: SCENE_SCHEMA_VERSION,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::testing::world_with;
    use crate::sim::{VehicleKind, VehicleState};

    #[test]
    fn single_vehicle_is_two_lines() {
        let w = world_with(
            4,
            vec![VehicleState::new("ego", VehicleKind::Ego, 3, 120.0, 25.0)],
        );
        let s = scene_to_text(&w);
        assert_eq!(s.text.lines().count(), 2);
        assert_eq!(s.vehicle_count, 1);
        assert_eq!(
            s.text.lines().nth(1).unwrap(),
            "ego: lane_3, position 120.0 m, speed 25.0 m/s (ego)"
        );
    }

    #[test]
    fn lane_change_example_layout() {
        let w = world_with(
            4,
            vec![
                VehicleState::new("ego", VehicleKind::Ego, 3, 120.0, 25.0),
                VehicleState::new("veh4", VehicleKind::Npc, 3, 148.0, 23.0),
                VehicleState::new("veh1", VehicleKind::Npc, 2, 60.0, 27.0),
            ],
        );
        let s = scene_to_text(&w);
        assert!(s
            .text
            .starts_with("Highway with 4 lanes, named lane_0 (leftmost) to lane_3 (rightmost)."));
        assert!(s.text.contains("veh4: lane_3"));
        assert!(s.text.contains("veh1: lane_2"));
        for id in ["ego", "veh4", "veh1"] {
            assert_eq!(s.text.matches(&format!("{id}: ")).count(), 1);
        }
        assert_eq!(s, scene_to_text(&w.clone()));
    }
}
