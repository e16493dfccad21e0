mod support;

use std::collections::BTreeMap;

use cav_marl::marl::{comfort, global_reward, Env, EnvConfig, ShieldMode};
use cav_marl::perception::PerceptionParams;
use cav_marl::safety::{is_safe, phi, shield, SafetyParams};
use cav_marl::traffic::{self, detect_collisions, TrafficParams};
use cav_marl::world::{immediate_follower, immediate_leader, ScenarioSpec, VehicleKind};
use cav_marl::Action;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

const DT: f64 = 0.1;

fn shape(snap: bool) -> WorldShape {
    WorldShape {
        max_vehicles: 12,
        max_lanes: 3,
        lengths: (80.0, 500.0),
        maneuver_prob: 0.3,
        snap,
    }
}

fn env_config(seed: u64, density: f64, cav_ratio: f64, shield: ShieldMode) -> EnvConfig {
    EnvConfig {
        scenario: ScenarioSpec {
            density,
            cav_ratio,
            seed,
            max_timesteps: 150,
            ..ScenarioSpec::default()
        },
        traffic: TrafficParams::default(),
        safety: SafetyParams::default(),
        perception: PerceptionParams::default(),
        shield,
        reward_weight: 0.1,
        comfort_threshold: 2.0,
        collision_penalty: 10.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shield_only_executes_checked_actions(seed in any::<u64>(), proposal in 0usize..3) {
        let (traffic, safety) = (TrafficParams::default(), SafetyParams::default());
        let w = random_world(&mut ChaCha8Rng::seed_from_u64(seed), &shape(false));
        let proposed = Action::from_policy_index(proposal);
        for i in w.cav_ids().into_iter().filter(|&i| !w.vehicle(i).is_maneuvering()) {
            let v = phi(&w, i, proposed, &traffic, &safety, DT);
            prop_assert_eq!(v.overridden, v.executed != proposed);
            if v.executed == Action::EmergencyStop {
                for a in Action::POLICY {
                    prop_assert!(!is_safe(&w, i, a, &traffic, &safety, DT));
                }
            } else {
                prop_assert!(is_safe(&w, i, v.executed, &traffic, &safety, DT));
                for &a in &v.tried {
                    prop_assert!(!is_safe(&w, i, a, &traffic, &safety, DT));
                }
            }
        }
    }

    #[test]
    fn shield_is_idempotent(seed in any::<u64>(), proposal in 0usize..3) {
        let (traffic, safety) = (TrafficParams::default(), SafetyParams::default());
        let w = random_world(&mut ChaCha8Rng::seed_from_u64(seed), &shape(false));
        for i in w.cav_ids() {
            let first = shield(&w, i, Action::from_policy_index(proposal), &traffic, &safety, DT);
            let again = shield(&w, i, first.executed, &traffic, &safety, DT);
            prop_assert_eq!(again.executed, first.executed);
            prop_assert!(!again.overridden);
        }
    }

    #[test]
    fn lane_queries_match_sorting(seed in any::<u64>(), snap in any::<bool>()) {
        let w = random_world(&mut ChaCha8Rng::seed_from_u64(seed), &shape(snap));
        for i in 0..w.vehicles.len() {
            for lane in 0..w.road.num_lanes {
                prop_assert_eq!(immediate_leader(&w, i, lane), successor(&w, i, &|v| v.lane == lane));
                prop_assert_eq!(immediate_follower(&w, i, lane), predecessor(&w, i, &|v| v.lane == lane));
            }
        }
        prop_assert_eq!(detect_collisions(&w), collisions(&w));
    }

    #[test]
    fn steps_keep_positions_on_the_road(seed in any::<u64>()) {
        let (traffic, safety) = (TrafficParams::default(), SafetyParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = random_world(&mut rng, &shape(false));
        for _ in 0..20 {
            let actions: BTreeMap<_, _> =
                w.cav_ids().into_iter().map(|i| (i, Action::POLICY[rng.random_range(0..3)])).collect();
            w = traffic::step(&w, &actions, &traffic, &safety, DT).0;
            for v in &w.vehicles {
                prop_assert!(v.velocity >= 0.0);
                prop_assert!(v.lane < w.road.num_lanes);
                if w.road.is_ring() {
                    prop_assert!((0.0..w.road.length).contains(&v.longitudinal_pos));
                }
                if v.kind == VehicleKind::Obstacle {
                    prop_assert_eq!(v.velocity, 0.0);
                }
            }
        }
    }

    #[test]
    fn reward_matches_enumeration(seed in any::<u64>(), weight in 0.0f64..1.0, threshold in 0.1f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_world(&mut rng, &shape(false));
        let executed: Vec<Action> = (0..w.vehicles.len())
            .map(|_| [Action::KeepLane, Action::ChangeLeft, Action::ChangeRight, Action::EmergencyStop][rng.random_range(0..4)])
            .collect();
        for v in &w.vehicles {
            prop_assert_eq!(comfort(v.accel, executed[v.id], threshold), comfort_by_hand(v.accel, executed[v.id], threshold));
        }
        let got = global_reward(&w, &executed, weight, threshold);
        let (v_bar, c_bar, reward) = reward_by_hand(&w, &executed, weight, threshold);
        prop_assert!((got.v_bar - v_bar).abs() < 1e-12);
        prop_assert!((got.c_bar - c_bar).abs() < 1e-12);
        prop_assert!((got.reward - reward).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn shielded_episodes_stay_safe(seed in any::<u64>(), density in 0.01f64..0.05, cav_ratio in 0.3f64..1.0) {
        let cfg = env_config(seed, density, cav_ratio, ShieldMode::On);
        let d_s = cfg.safety.d_s;
        let Ok(mut env) = Env::new(cfg) else { return Ok(()) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while !env.is_done() {
            let proposals: Vec<Action> = env.agents().iter().map(|_| Action::POLICY[rng.random_range(0..3)]).collect();
            let o = env.step_with(&proposals);
            prop_assert!(o.events.collisions.is_empty());
            prop_assert_eq!(o.record.unsafe_actions, 0);
            prop_assert!((o.record.flow_vps - env.density() * o.record.v_bar_mps).abs() < 1e-12);
            for &i in env.agents() {
                if let Some((_, gap)) = env.world().leading_vehicle(i) {
                    prop_assert!(gap >= d_s, "agent {} gap {}", i, gap);
                }
            }
        }
    }
}
