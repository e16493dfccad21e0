//! The obstacle-at-corner scene: two parked obstacles in the left lane just
//! past a corner that hides them from approaching vehicles, a lead CAV in the
//! right lane that sees them first, a trailing CAV and a human driver in the
//! left lane, and a platoon of human drivers coming up the right lane.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentSpec, ObstacleCornerParams};
use crate::action::Action;
use crate::marl::{EnvConfig, ShieldMode, StepOutcome};
use crate::world::{
    BlockedBoundary, OcclusionZone, RoadConfig, RosterEntry, ScenarioSpec, Topology, VehicleKind, WorldState,
};

/// The lane holding the obstacles.
pub const OBSTACLE_LANE: usize = 0;
/// Vehicle id of the trailing CAV in every obstacle scene.
pub const TRAILING_CAV: usize = 1;

/// Build the scene. Evaluation scenes use the configured geometry with small
/// position jitter. Training scenes also move the corner and obstacles by up
/// to `train_shift`, drop the obstacles with probability
/// `1 - train_obstacle_prob` and put them in the other lane with probability
/// `train_other_lane_prob`, so the policy has to look for them.
pub fn obstacle_scenario(spec: &ExperimentSpec, seed: u64, training: bool) -> ScenarioSpec {
    let p = &spec.experiment.obstacle;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = |rng: &mut ChaCha8Rng| {
        if p.jitter > 0.0 {
            rng.random_range(-p.jitter..p.jitter)
        } else {
            0.0
        }
    };
    let entry = |kind, lane, pos: f64, velocity| RosterEntry {
        kind,
        lane,
        pos,
        velocity,
    };

    let trailing = p.trailing_pos + jitter(&mut rng);
    let lead = trailing + p.lead_gap + jitter(&mut rng);
    let human = trailing - p.human_gap + jitter(&mut rng);
    let mut roster = vec![
        entry(VehicleKind::Cav, p.lead_lane, lead, p.initial_speed),
        entry(VehicleKind::Cav, OBSTACLE_LANE, trailing, p.initial_speed),
        entry(VehicleKind::Hdv, OBSTACLE_LANE, human, p.initial_speed),
    ];
    let front = trailing - p.platoon_back + jitter(&mut rng);
    for k in 0..p.platoon_size {
        roster.push(entry(
            VehicleKind::Hdv,
            1 - OBSTACLE_LANE,
            front - p.platoon_pitch * k as f64,
            p.platoon_speed,
        ));
    }
    roster.retain(|e| e.pos >= 0.0);

    let (shift, keep, lane) = if training {
        let shift = if p.train_shift > 0.0 {
            rng.random_range(-p.train_shift..p.train_shift)
        } else {
            0.0
        };
        let keep = rng.random_bool(p.train_obstacle_prob);
        let lane = if rng.random_bool(p.train_other_lane_prob) {
            1 - OBSTACLE_LANE
        } else {
            OBSTACLE_LANE
        };
        (shift, keep, lane)
    } else {
        (0.0, true, OBSTACLE_LANE)
    };
    if keep {
        for k in 0..2 {
            let pos = p.obstacle_pos + shift + k as f64 * (spec.scenario.vehicle_length + p.obstacle_spacing);
            roster.push(entry(VehicleKind::Obstacle, lane, pos, 0.0));
        }
    }
    let occlusion_zones = if p.occluded {
        vec![OcclusionZone {
            start: p.corner + shift,
            end: p.corner_end + shift,
            blocks: BlockedBoundary::Entry,
        }]
    } else {
        Vec::new()
    };
    ScenarioSpec {
        road: RoadConfig {
            num_lanes: 2,
            length: p.road_length,
            topology: Topology::Open,
            occlusion_zones,
            ..spec.scenario.road.clone()
        },
        roster,
        seed,
        max_timesteps: p.max_timesteps,
        ..spec.scenario.clone()
    }
}

/// Environment settings for an obstacle scene with V2V sharing on or off.
pub fn obstacle_env(spec: &ExperimentSpec, scenario: ScenarioSpec, sharing: bool) -> EnvConfig {
    let mut cfg = spec.env_config(scenario, ShieldMode::On);
    cfg.perception.sharing = sharing;
    if spec.experiment.obstacle.humans_keep_lane {
        cfg.traffic.lane_change.incentive_threshold = f64::INFINITY;
    }
    cfg
}

/// Watches an obstacle episode: where each CAV starting in the obstacle lane
/// first leaves it, and whether vehicles pile up behind the obstacles.
#[derive(Clone, Debug)]
pub struct CornerLog {
    params: ObstacleCornerParams,
    dt: f64,
    obstacle_rear: Option<f64>,
    /// Position of each watched CAV when it first executed a lane change out
    /// of the obstacle lane.
    pub triggers: BTreeMap<usize, Option<f64>>,
    stuck_steps: BTreeMap<usize, usize>,
    /// Most vehicles simultaneously stuck for longer than `jam_seconds`.
    pub max_stuck: usize,
}

impl CornerLog {
    pub fn new(world: &WorldState, params: &ObstacleCornerParams, dt: f64) -> Self {
        let obstacle_rear = world
            .vehicles
            .iter()
            .filter(|v| v.kind == VehicleKind::Obstacle)
            .map(|v| v.longitudinal_pos - v.vehicle_length)
            .min_by(f64::total_cmp);
        let triggers = world
            .vehicles
            .iter()
            .filter(|v| v.kind == VehicleKind::Cav && v.lane == OBSTACLE_LANE)
            .map(|v| (v.id, None))
            .collect();
        CornerLog {
            params: params.clone(),
            dt,
            obstacle_rear,
            triggers,
            stuck_steps: BTreeMap::new(),
            max_stuck: 0,
        }
    }

    /// Record one step. `before` is the world the step started from and
    /// `after` the world it produced.
    pub fn observe(&mut self, before: &WorldState, outcome: &StepOutcome, after: &WorldState) {
        for (&id, trigger) in self.triggers.iter_mut() {
            let v = before.vehicle(id);
            let executed = outcome.events.executed[id];
            let leaves = match executed {
                Action::ChangeLeft => v.lane > OBSTACLE_LANE,
                Action::ChangeRight => v.lane == OBSTACLE_LANE,
                _ => false,
            };
            if trigger.is_none() && leaves && !v.is_maneuvering() {
                *trigger = Some(v.longitudinal_pos);
            }
        }
        let Some(rear) = self.obstacle_rear else { return };
        for v in after.vehicles.iter().filter(|v| v.kind != VehicleKind::Obstacle) {
            if v.velocity < self.params.jam_speed && v.longitudinal_pos < rear {
                *self.stuck_steps.entry(v.id).or_default() += 1;
            } else {
                self.stuck_steps.remove(&v.id);
            }
        }
        let limit = self.params.jam_seconds / self.dt;
        let stuck = self.stuck_steps.values().filter(|&&n| n as f64 > limit).count();
        self.max_stuck = self.max_stuck.max(stuck);
    }

    pub fn jam(&self) -> bool {
        self.max_stuck >= self.params.jam_vehicles
    }

    pub fn trigger(&self, id: usize) -> Option<f64> {
        self.triggers.get(&id).copied().flatten()
    }
}

/// True when the first trigger is strictly earlier. Never triggering counts
/// as later than any position.
pub fn strictly_earlier(first: Option<f64>, second: Option<f64>) -> bool {
    match (first, second) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        (None, _) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marl::Env;
    use crate::perception::{assemble, visible};

    fn scene(spec: &ExperimentSpec, sharing: bool) -> Env {
        let s = obstacle_scenario(spec, 7, false);
        Env::new(obstacle_env(spec, s, sharing)).unwrap()
    }

    #[test]
    fn layout() {
        let spec = ExperimentSpec::default();
        let env = scene(&spec, true);
        let w = env.world();
        assert_eq!(env.agents(), &[0, TRAILING_CAV]);
        assert_eq!(w.vehicle(TRAILING_CAV).lane, OBSTACLE_LANE);
        let obstacles = w.ids_of(VehicleKind::Obstacle);
        assert_eq!(obstacles.len(), 2);
        assert!(obstacles.iter().all(|&o| w.vehicle(o).lane == OBSTACLE_LANE));
    }

    #[test]
    fn corner_hides_the_obstacles_until_the_lead_passes() {
        let spec = ExperimentSpec::default();
        let env = scene(&spec, true);
        let w = env.world();
        let o = w.ids_of(VehicleKind::Obstacle)[0];
        let params = &env.config().perception;
        assert!(!visible(w, TRAILING_CAV, o, params));

        // move the lead CAV past the corner: it sees the obstacle and the
        // trailing CAV receives it as a shared feature
        let mut w = w.clone();
        w.vehicles[0].longitudinal_pos = spec.experiment.obstacle.corner + 10.0;
        w.vehicles[TRAILING_CAV].longitudinal_pos = spec.experiment.obstacle.corner - 60.0;
        assert!(visible(&w, 0, o, params));
        let obs = assemble(&w, TRAILING_CAV, params, None);
        assert!(!obs.visible_ids().contains(&o));
        assert!(obs.all_ids().contains(&o));
        let off = PerceptionParams {
            sharing: false,
            ..params.clone()
        };
        assert!(!assemble(&w, TRAILING_CAV, &off, None).all_ids().contains(&o));
    }

    #[test]
    fn without_the_corner_sharing_adds_nothing_about_the_obstacle() {
        let mut spec = ExperimentSpec::default();
        spec.experiment.obstacle.occluded = false;
        let env = scene(&spec, true);
        let mut w = env.world().clone();
        let o = w.ids_of(VehicleKind::Obstacle)[0];
        w.vehicles[TRAILING_CAV].longitudinal_pos = w.vehicle(o).longitudinal_pos - 60.0;
        let params = &env.config().perception;
        let off = PerceptionParams {
            sharing: false,
            ..params.clone()
        };
        let on = assemble(&w, TRAILING_CAV, params, None);
        let alone = assemble(&w, TRAILING_CAV, &off, None);
        assert!(on.visible_ids().contains(&o));
        assert_eq!(on.visible_ids(), alone.visible_ids());
    }

    #[test]
    fn training_scenes_vary() {
        let spec = ExperimentSpec::default();
        let with: usize = (0..40)
            .filter(|&k| {
                obstacle_scenario(&spec, k, true)
                    .roster
                    .iter()
                    .any(|e| e.kind == VehicleKind::Obstacle)
            })
            .count();
        assert!((15..40).contains(&with), "{with}");
        assert_eq!(obstacle_scenario(&spec, 3, true), obstacle_scenario(&spec, 3, true));
    }

    #[test]
    fn earlier_ordering() {
        assert!(strictly_earlier(Some(500.0), Some(590.0)));
        assert!(!strictly_earlier(Some(590.0), Some(590.0)));
        assert!(strictly_earlier(Some(590.0), None));
        assert!(!strictly_earlier(None, None));
        assert!(!strictly_earlier(None, Some(1.0)));
    }

    use crate::perception::PerceptionParams;
}
