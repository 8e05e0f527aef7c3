//! Depth-limited forward search over meta-action sequences.
//!
//! The objective rewards ego speed and penalizes collisions and lane changes.
//! With the default zero lane-change penalty, lane changes on an empty road
//! score exactly like keeping the lane, so the choice between them falls to
//! the tie-break.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::perception::get_available_actions;
use crate::sim::{step_world_with, MetaAction, NpcModel, WorldState, DECISION_INTERVAL};

/// Scores closer than this are a tie.
pub const TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveWeights {
    /// Reward per m/s of ego speed at each step.
    pub w_speed: f64,
    pub w_collision: f64,
    pub w_lane_change: f64,
    /// Discount in (0, 1].
    pub gamma: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            w_speed: 1.0,
            w_collision: 1000.0,
            w_lane_change: 0.0,
            gamma: 1.0,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.w_collision > 0.0) {
            return Err("weights.w_collision must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err("weights.gamma must lie in (0, 1]".into());
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            w_speed: self.w_speed * c,
            w_collision: self.w_collision * c,
            w_lane_change: self.w_lane_change * c,
            gamma: self.gamma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    SeededRandom,
    FixedOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub depth: usize,
    pub npc_model: NpcModel,
    pub tie_break: TieBreak,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            npc_model: NpcModel::Idm,
            tie_break: TieBreak::SeededRandom,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchDiagnostics {
    pub n_leaves: usize,
    pub best_score: f64,
    /// More than one distinct first action reaches the best score.
    pub was_tie: bool,
    pub best_sequence: Vec<MetaAction>,
}

/// Running score along one path.
#[derive(Debug, Clone, Copy)]
struct PathScore {
    score: f64,
    collided: bool,
    discount: f64,
}

impl PathScore {
    fn start() -> Self {
        Self {
            score: 0.0,
            collided: false,
            discount: 1.0,
        }
    }

    fn advance(
        mut self,
        world: &WorldState,
        action: MetaAction,
        w: &ObjectiveWeights,
        model: NpcModel,
    ) -> (Self, WorldState) {
        let out = step_world_with(world, action, DECISION_INTERVAL, model);
        if !self.collided {
            self.score += self.discount * w.w_speed * out.world.ego().speed;
            if out.applied_action.is_lane_change() {
                self.score -= w.w_lane_change;
            }
            let ego = &out.world.ego().id;
            if out.collisions.iter().any(|c| c.involves(ego)) {
                self.score -= w.w_collision;
                self.collided = true;
            }
            self.discount *= w.gamma;
        }
        (self, out.world)
    }
}

/// Score an action sequence; accumulation stops at the first ego collision.
pub fn score_rollout(
    world: &WorldState,
    actions: &[MetaAction],
    weights: &ObjectiveWeights,
) -> f64 {
    score_rollout_with(world, actions, weights, NpcModel::Idm)
}

pub fn score_rollout_with(
    world: &WorldState,
    actions: &[MetaAction],
    weights: &ObjectiveWeights,
    model: NpcModel,
) -> f64 {
    let mut w = world.clone();
    let mut s = PathScore::start();
    for &a in actions {
        if s.collided {
            break;
        }
        let (next_s, next_w) = s.advance(&w, a, weights, model);
        s = next_s;
        w = next_w;
    }
    s.score
}

struct Leaf {
    sequence: Vec<MetaAction>,
    score: f64,
}

fn expand(
    world: &WorldState,
    prefix: &mut Vec<MetaAction>,
    acc: PathScore,
    remaining: usize,
    w: &ObjectiveWeights,
    model: NpcModel,
    out: &mut Vec<Leaf>,
) {
    if remaining == 0 {
        out.push(Leaf {
            sequence: prefix.clone(),
            score: acc.score,
        });
        return;
    }
    for a in get_available_actions(world) {
        let (s, next) = acc.advance(world, a, w, model);
        prefix.push(a);
        expand(&next, prefix, s, remaining - 1, w, model, out);
        prefix.pop();
    }
}

/// Enumerate every available-action sequence of length `depth` and return
/// the first action of a best one.
pub fn forward_search(
    world: &WorldState,
    config: &SearchConfig,
    weights: &ObjectiveWeights,
) -> (MetaAction, SearchDiagnostics) {
    let depth = config.depth.max(1);
    let model = config.npc_model;
    let roots = get_available_actions(world);
    let mut leaves: Vec<Leaf> = roots
        .par_iter()
        .map(|&a| {
            let (s, next) = PathScore::start().advance(world, a, weights, model);
            let mut out = Vec::new();
            let mut prefix = vec![a];
            expand(&next, &mut prefix, s, depth - 1, weights, model, &mut out);
            out
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let best = leaves
        .iter()
        .map(|l| l.score)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut firsts: Vec<MetaAction> = Vec::new();
    for l in leaves.iter().filter(|l| best - l.score < TIE_EPSILON) {
        if !firsts.contains(&l.sequence[0]) {
            firsts.push(l.sequence[0]);
        }
    }
    firsts.sort_by_key(|a| MetaAction::ALL.iter().position(|b| b == a));
    let chosen = match config.tie_break {
        TieBreak::FixedOrder => firsts[0],
        TieBreak::SeededRandom if firsts.len() == 1 => firsts[0],
        TieBreak::SeededRandom => {
            // A fork: the world's own generator is left untouched.
            let mut rng: ChaCha8Rng = world.rng_state.clone();
            rng.set_stream(world.tick);
            firsts[rng.gen_range(0..firsts.len())]
        }
    };
    let best_idx = leaves
        .iter()
        .position(|l| l.sequence[0] == chosen && best - l.score < TIE_EPSILON)
        .expect("chosen action has a best leaf");
    let diagnostics = SearchDiagnostics {
        n_leaves: leaves.len(),
        best_score: best,
        was_tie: firsts.len() > 1,
        best_sequence: std::mem::take(&mut leaves[best_idx].sequence),
    };
    (chosen, diagnostics)
}
