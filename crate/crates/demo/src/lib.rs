//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations: a ring-road simulation with the shield switched on or
//! off, a verdict explorer for one hand-placed scene, and the car-following
//! acceleration curve.

use cav_marl::marl::{Env, EnvConfig, ShieldMode};
use cav_marl::perception::PerceptionParams;
use cav_marl::safety::{is_safe, phi, SafetyParams};
use cav_marl::traffic::{idm_accel, IdmParams, TrafficParams};
use cav_marl::world::{init_world, RoadConfig, RosterEntry, ScenarioSpec, Topology, VehicleKind};
use cav_marl::Action;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

/// Values per vehicle in `RingSim::vehicles`.
#[wasm_bindgen]
pub fn vehicle_stride() -> usize {
    6
}

fn kind_code(kind: VehicleKind) -> f64 {
    match kind {
        VehicleKind::Cav => 0.0,
        VehicleKind::Hdv => 1.0,
        VehicleKind::Obstacle => 2.0,
    }
}

fn action_index(a: Action) -> f64 {
    match a {
        Action::KeepLane => 0.0,
        Action::ChangeLeft => 1.0,
        Action::ChangeRight => 2.0,
        Action::EmergencyStop => 3.0,
    }
}

/// A three-lane ring whose CAVs propose uniformly random lane actions. With
/// the shield on, every proposal passes through the safe action mapping;
/// off, proposals execute as they are and the episode restarts after a
/// collision.
#[wasm_bindgen]
pub struct RingSim {
    env: Env,
    rng: ChaCha8Rng,
    seed: u64,
    episodes: u32,
    collisions: u32,
    overrides: u32,
    lowest_gap: f64,
}

#[wasm_bindgen]
impl RingSim {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, vehicles: usize, cav_ratio: f64, shielded: bool) -> Result<RingSim, JsError> {
        let road = RoadConfig::default();
        let cfg = EnvConfig {
            scenario: ScenarioSpec {
                density: vehicles as f64 / road.length,
                cav_ratio,
                seed,
                max_timesteps: 3000,
                road,
                ..ScenarioSpec::default()
            },
            traffic: TrafficParams::default(),
            safety: SafetyParams::default(),
            perception: PerceptionParams::default(),
            shield: if shielded { ShieldMode::On } else { ShieldMode::Off },
            reward_weight: 0.1,
            comfort_threshold: 2.0,
            collision_penalty: 10.0,
        };
        let env = Env::new(cfg).map_err(|e| JsError::new(&e.to_string()))?;
        Ok(RingSim {
            env,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            episodes: 1,
            collisions: 0,
            overrides: 0,
            lowest_gap: f64::INFINITY,
        })
    }

    /// Advance `steps` timesteps; CAVs draw a new proposal once a second.
    pub fn advance(&mut self, steps: usize) -> Result<(), JsError> {
        for _ in 0..steps {
            if self.env.is_done() {
                let mut cfg = self.env.config().clone();
                cfg.scenario.seed = self.seed + self.episodes as u64;
                self.env = Env::new(cfg).map_err(|e| JsError::new(&e.to_string()))?;
                self.episodes += 1;
            }
            let decide = self.env.world().time.is_multiple_of(10);
            let proposals: Vec<Action> = self
                .env
                .agents()
                .iter()
                .map(|_| {
                    if decide {
                        Action::POLICY[self.rng.random_range(0..3)]
                    } else {
                        Action::KeepLane
                    }
                })
                .collect();
            let o = self.env.step_with(&proposals);
            self.collisions += o.events.collisions.len() as u32;
            self.overrides += o.verdicts.iter().filter(|v| v.overridden).count() as u32;
            self.lowest_gap = self.lowest_gap.min(o.record.min_headway_m);
        }
        Ok(())
    }

    /// Flat rows of [position, lane coordinate, kind, action, speed, id];
    /// the lane coordinate is fractional mid-change.
    pub fn vehicles(&self) -> Vec<f64> {
        let w = self.env.world();
        let mut out = Vec::with_capacity(w.vehicles.len() * vehicle_stride());
        for v in &w.vehicles {
            let lane = v.lane as f64 - v.lateral_offset / w.road.lane_width;
            out.extend([
                v.longitudinal_pos,
                lane,
                kind_code(v.kind),
                action_index(v.current_action),
                v.velocity,
                v.id as f64,
            ]);
        }
        out
    }

    pub fn road_length(&self) -> f64 {
        self.env.world().road.length
    }

    pub fn lanes(&self) -> usize {
        self.env.world().road.num_lanes
    }

    pub fn safe_distance(&self) -> f64 {
        self.env.config().safety.d_s
    }

    /// [time (s), mean speed (m/s), lowest bumper gap so far (m), collisions,
    /// shield overrides, episode]
    pub fn stats(&self) -> Vec<f64> {
        let w = self.env.world();
        let moving: Vec<f64> = w
            .vehicles
            .iter()
            .filter(|v| v.kind != VehicleKind::Obstacle)
            .map(|v| v.velocity)
            .collect();
        let mean = moving.iter().sum::<f64>() / moving.len().max(1) as f64;
        vec![
            w.time as f64 * self.env.config().scenario.dt,
            mean,
            self.lowest_gap,
            self.collisions as f64,
            self.overrides as f64,
            self.episodes as f64,
        ]
    }
}

/// Verdicts for a CAV in the middle of three lanes with one vehicle placed in
/// each lane. `gaps` are bumper gaps from the CAV (negative behind it) and
/// `speeds` the matching speeds, ordered left, same, right lane; a NaN gap
/// leaves that lane empty.
///
/// Returns [KL safe, CL safe, CR safe, executed action] where the action is
/// 0 KL, 1 CL, 2 CR, 3 ES.
#[wasm_bindgen]
pub fn shield_verdicts(ego_speed: f64, gaps: &[f64], speeds: &[f64], proposed: u8) -> Result<Vec<f64>, JsError> {
    if gaps.len() != 3 || speeds.len() != 3 {
        return Err(JsError::new("expected three gaps and three speeds"));
    }
    let length = 4.5;
    let ego_front = 500.0;
    let mut roster = vec![RosterEntry {
        kind: VehicleKind::Cav,
        lane: 1,
        pos: ego_front,
        velocity: ego_speed,
    }];
    for lane in 0..3 {
        if gaps[lane].is_nan() {
            continue;
        }
        let pos = if gaps[lane] >= 0.0 {
            ego_front + gaps[lane] + length
        } else {
            ego_front - length + gaps[lane]
        };
        roster.push(RosterEntry {
            kind: VehicleKind::Hdv,
            lane,
            pos,
            velocity: speeds[lane],
        });
    }
    let scenario = ScenarioSpec {
        road: RoadConfig {
            topology: Topology::Open,
            length: 2000.0,
            ..RoadConfig::default()
        },
        roster,
        spawn_gap: 0.0,
        vehicle_length: length,
        ..ScenarioSpec::default()
    };
    let world = init_world(&scenario).map_err(|e| JsError::new(&e.to_string()))?;
    let ego = world
        .vehicles
        .iter()
        .find(|v| v.kind == VehicleKind::Cav)
        .map(|v| v.id)
        .ok_or_else(|| JsError::new("no CAV in the scene"))?;
    let (traffic, safety, dt) = (TrafficParams::default(), SafetyParams::default(), 0.1);
    let mut out: Vec<f64> = Action::POLICY
        .iter()
        .map(|&a| is_safe(&world, ego, a, &traffic, &safety, dt) as u8 as f64)
        .collect();
    let proposal = Action::from_policy_index(proposed.min(2) as usize);
    out.push(action_index(phi(&world, ego, proposal, &traffic, &safety, dt).executed));
    Ok(out)
}

/// Car-following acceleration at each gap in `gaps` for a follower at
/// `speed` behind a leader at `leader_speed`; `cav` picks the connected
/// vehicle's parameters instead of the human driver's. Gaps at or below zero
/// give NaN.
#[wasm_bindgen]
pub fn idm_curve(speed: f64, leader_speed: f64, cav: bool, gaps: &[f64]) -> Vec<f64> {
    let p = if cav {
        IdmParams::cav_default()
    } else {
        IdmParams::default()
    };
    let max_decel = SafetyParams::default().b_emergency;
    gaps.iter()
        .map(|&g| idm_accel(speed, g, leader_speed, &p, max_decel).unwrap_or(f64::NAN))
        .collect()
}

/// Every action the explorer and the ring can report, in index order.
#[wasm_bindgen]
pub fn action_names() -> Vec<String> {
    [
        Action::KeepLane,
        Action::ChangeLeft,
        Action::ChangeRight,
        Action::EmergencyStop,
    ]
    .iter()
    .map(|a| a.code().to_string())
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_runs_without_collisions_when_shielded() {
        let mut sim = RingSim::new(3, 12, 0.7, true).unwrap();
        sim.advance(600).unwrap();
        let s = sim.stats();
        assert_eq!(s[3], 0.0);
        assert!(s[2] > 0.0);
        assert_eq!(sim.vehicles().len(), 12 * vehicle_stride());
    }

    #[test]
    fn open_lanes_keep_the_proposal() {
        let nan = f64::NAN;
        let v = shield_verdicts(20.0, &[nan, nan, nan], &[0.0; 3], 1).unwrap();
        assert_eq!(v, vec![1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn stopped_car_close_ahead_forces_a_stop() {
        let v = shield_verdicts(25.0, &[5.0, 5.0, 5.0], &[0.0; 3], 0).unwrap();
        assert_eq!(v, vec![0.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn occupied_neighbor_lane_overrides_the_change() {
        let nan = f64::NAN;
        let v = shield_verdicts(20.0, &[-2.0, nan, nan], &[20.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn curve_is_zero_at_free_flow() {
        let a = idm_curve(30.0, 30.0, false, &[1e9, 0.0]);
        assert!(a[0].abs() < 1e-6);
        assert!(a[1].is_nan());
    }
}
