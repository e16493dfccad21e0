use serde::{Deserialize, Serialize};

use super::{global_reward, RewardBreakdown};
use crate::action::Action;
use crate::error::Result;
use crate::harness::{MetricsRecord, MPH_PER_MPS};
use crate::perception::{assemble, HistoryBuffer, HistoryWindow, PerceptionParams};
use crate::safety::{self, SafetyParams, SafetyVerdict};
use crate::traffic::{commit_action, integrate, min_headway, plan_hdvs, StepEvents, TrafficParams};
use crate::world::{init_world, ScenarioSpec, VehicleId, VehicleKind, WorldState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShieldMode {
    #[default]
    On,
    /// Every proposal executes unchecked.
    Off,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub scenario: ScenarioSpec,
    pub traffic: TrafficParams,
    pub safety: SafetyParams,
    pub perception: PerceptionParams,
    pub shield: ShieldMode,
    pub reward_weight: f64,
    pub comfort_threshold: f64,
    pub collision_penalty: f64,
}

/// What one call to `Env::step` produced.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// One verdict per agent, in agent order.
    pub verdicts: Vec<SafetyVerdict>,
    pub events: StepEvents,
    pub breakdown: RewardBreakdown,
    /// Shared reward including any collision penalty.
    pub reward: f64,
    pub record: MetricsRecord,
    pub done: bool,
}

/// An episode in progress: the world, the CAV agents and their histories.
#[derive(Clone, Debug)]
pub struct Env {
    cfg: EnvConfig,
    world: WorldState,
    agents: Vec<VehicleId>,
    histories: Vec<HistoryBuffer>,
    last_executed: Vec<Action>,
    episode_reward: f64,
    density: f64,
    done: bool,
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.traffic.validate()?;
        cfg.safety.validate()?;
        cfg.perception.validate()?;
        let world = init_world(&cfg.scenario)?;
        let agents = world.cav_ids();
        let row = cfg.perception.history_row_width();
        let moving = world
            .vehicles
            .iter()
            .filter(|v| v.kind != VehicleKind::Obstacle)
            .count();
        Ok(Env {
            histories: agents
                .iter()
                .map(|_| HistoryBuffer::new(cfg.perception.history, row))
                .collect(),
            last_executed: vec![Action::KeepLane; agents.len()],
            density: moving as f64 / world.road.length,
            agents,
            world,
            cfg,
            episode_reward: 0.0,
            done: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn agents(&self) -> &[VehicleId] {
        &self.agents
    }

    /// Moving vehicles per meter of road.
    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn episode_reward(&self) -> f64 {
        self.episode_reward
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Append every agent's current observation to its history.
    pub fn observe(&mut self) {
        let mut rng = self.world.rng.clone();
        for (k, &i) in self.agents.iter().enumerate() {
            let obs = assemble(&self.world, i, &self.cfg.perception, Some(&mut rng));
            self.histories[k].push(obs, self.last_executed[k]);
        }
        self.world.rng = rng;
    }

    pub fn window(&self, agent: usize) -> HistoryWindow {
        self.histories[agent].window()
    }

    pub fn windows(&self) -> Vec<HistoryWindow> {
        self.histories.iter().map(|h| h.window()).collect()
    }

    pub fn history(&self, agent: usize) -> &HistoryBuffer {
        &self.histories[agent]
    }

    /// Advance one step. Human drivers commit first; then, in ascending id,
    /// each agent's `decide` receives its index, its vehicle id and the
    /// shield for the world as committed so far, and returns a verdict.
    pub fn step(
        &mut self,
        mut decide: impl FnMut(usize, VehicleId, &dyn Fn(Action) -> SafetyVerdict) -> SafetyVerdict,
    ) -> StepOutcome {
        let cfg = &self.cfg;
        let dt = cfg.scenario.dt;
        let mut planned = plan_hdvs(&self.world, &cfg.traffic, &cfg.safety, dt);
        let mut verdicts = Vec::with_capacity(self.agents.len());
        for (k, &i) in self.agents.iter().enumerate() {
            let verdict = {
                let w = &planned;
                let shield = |a: Action| match cfg.shield {
                    ShieldMode::On => safety::shield(w, i, a, &cfg.traffic, &cfg.safety, dt),
                    ShieldMode::Off => safety::identity(a),
                };
                decide(k, i, &shield)
            };
            commit_action(&mut planned, i, verdict.executed, &cfg.traffic, dt);
            verdicts.push(verdict);
        }
        let (next, events) = integrate(&planned, &cfg.traffic, &cfg.safety, dt);

        let breakdown = global_reward(&next, &events.executed, cfg.reward_weight, cfg.comfort_threshold);
        let collisions = events.collisions.len() as u32;
        let reward = breakdown.reward - cfg.collision_penalty * collisions as f64;
        self.episode_reward += reward;
        let unsafe_actions = self
            .agents
            .iter()
            .filter(|&&i| next.leading_vehicle(i).is_some_and(|(_, gap)| gap < cfg.safety.d_s))
            .count() as u32;
        let es_count = next
            .vehicles
            .iter()
            .filter(|v| v.kind != VehicleKind::Obstacle && events.executed[v.id] == Action::EmergencyStop)
            .count() as u32;
        let record = MetricsRecord {
            timestep: next.time,
            v_bar_mps: breakdown.v_bar,
            v_bar_mph: breakdown.v_bar * MPH_PER_MPS,
            c_bar: breakdown.c_bar,
            min_headway_m: min_headway(&next),
            flow_vps: self.density * breakdown.v_bar,
            unsafe_actions,
            es_count,
            collisions,
            episode_reward: self.episode_reward,
        };
        for (k, &i) in self.agents.iter().enumerate() {
            self.last_executed[k] = events.executed[i];
        }
        let terminal = collisions > 0 && cfg.shield == ShieldMode::Off;
        self.done = terminal || next.time as usize >= cfg.scenario.max_timesteps;
        self.world = next;
        StepOutcome {
            verdicts,
            events,
            breakdown,
            reward,
            record,
            done: self.done,
        }
    }

    /// Step with fixed proposals, one per agent.
    pub fn step_with(&mut self, proposals: &[Action]) -> StepOutcome {
        self.step(|k, _, shield| shield(proposals.get(k).copied().unwrap_or(Action::KeepLane)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(seed: u64) -> EnvConfig {
        EnvConfig {
            scenario: ScenarioSpec {
                density: 8.0 / 400.0,
                seed,
                max_timesteps: 50,
                ..ScenarioSpec::default()
            },
            traffic: TrafficParams::default(),
            safety: SafetyParams::default(),
            perception: PerceptionParams::default(),
            shield: ShieldMode::On,
            reward_weight: 0.1,
            comfort_threshold: 2.0,
            collision_penalty: 10.0,
        }
    }

    #[test]
    fn runs_to_the_time_limit() {
        let mut env = Env::new(config(3)).unwrap();
        assert_eq!(env.agents().len(), 4);
        let mut steps = 0;
        loop {
            env.observe();
            let out = env.step_with(&[Action::ChangeLeft; 4]);
            steps += 1;
            assert_eq!(out.record.unsafe_actions, 0);
            assert_eq!(out.record.collisions, 0);
            assert_eq!(out.record.flow_vps, env.density() * out.record.v_bar_mps);
            if out.done {
                break;
            }
        }
        assert_eq!(steps, 50);
        assert_eq!(env.history(0).len(), 8);
    }

    #[test]
    fn same_seed_same_episode() {
        let run = |seed| {
            let mut env = Env::new(config(seed)).unwrap();
            let mut out = Vec::new();
            while !env.is_done() {
                env.observe();
                out.push(env.step_with(&[Action::ChangeRight; 4]).record);
            }
            out
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }
}
