//! Safe multi-agent actor-critic: reward, replay, centralized critics,
//! decentralized actors over action-observation histories, and the
//! training and execution loops.

mod checkpoint;
mod env;
mod nets;
mod replay;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MANIFEST};
pub use env::{Env, EnvConfig, ShieldMode, StepOutcome};
pub use nets::{actor_objective, critic_loss, ActorCache, ActorNet, ActorSample, CriticCache, CriticNet, CriticSample};
pub use replay::{ReplayBuffer, Transition};
pub use trainer::{act_decentralized, EpisodeSummary, Trainer};

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::error::{Error, Result};
use crate::world::{VehicleKind, WorldState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub buffer_capacity: usize,
    pub hidden: usize,
    /// Soft-update rate of the target networks.
    pub tau: f64,
    /// Environment steps between soft updates.
    pub target_update_every: usize,
    /// Probability of following the actor (the rest is uniform exploration),
    /// ramped linearly from start to end over the first `epsilon_ramp`
    /// fraction of training.
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_ramp: f64,
    /// Weight of mean speed against mean comfort in the reward (s/m).
    pub reward_weight: f64,
    /// Acceleration magnitude separating comfortable from uncomfortable (m/s²).
    pub comfort_threshold: f64,
    /// Reward subtracted per collision; only reachable without the shield.
    pub collision_penalty: f64,
    /// One actor and one critic for all agents instead of one each.
    pub share_weights: bool,
    /// Use the actions the other agents actually took at the next decision
    /// in the critic target instead of their target actors' choices.
    pub replayed_next_actions: bool,
    /// Simulation steps per agent decision.
    pub decision_interval: usize,
    /// Decisions between learning updates.
    pub train_every: usize,
    /// Transitions stored before learning starts.
    pub warmup: usize,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// Weight of the squared-logit penalty in the actor objective.
    pub logit_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 10,
            gamma: 0.9,
            batch_size: 64,
            lr: 0.01,
            buffer_capacity: 1_000_000,
            hidden: 128,
            tau: 0.01,
            target_update_every: 100,
            epsilon_start: 0.2,
            epsilon_end: 0.95,
            epsilon_ramp: 0.5,
            reward_weight: 0.1,
            comfort_threshold: 2.0,
            collision_penalty: 10.0,
            share_weights: false,
            replayed_next_actions: false,
            decision_interval: 1,
            train_every: 1,
            warmup: 64,
            grad_clip: 0.0,
            logit_penalty: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invariant("train.gamma", "gamma in (0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invariant("train.batch_size", "batch_size >= 1"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invariant("train.tau", "tau in (0, 1]"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invariant("train.lr", "lr > 0"));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::invariant("train.buffer_capacity", "buffer_capacity >= 1"));
        }
        if self.hidden == 0 {
            return Err(Error::invariant("train.hidden", "hidden >= 1"));
        }
        if self.target_update_every == 0 {
            return Err(Error::invariant(
                "train.target_update_every",
                "target_update_every >= 1",
            ));
        }
        for (key, v) in [
            ("train.epsilon_start", self.epsilon_start),
            ("train.epsilon_end", self.epsilon_end),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invariant(key, "epsilon in [0, 1]"));
            }
        }
        if !(self.epsilon_ramp > 0.0 && self.epsilon_ramp <= 1.0) {
            return Err(Error::invariant("train.epsilon_ramp", "epsilon_ramp in (0, 1]"));
        }
        if !(self.reward_weight >= 0.0) {
            return Err(Error::invariant("train.reward_weight", "reward_weight >= 0"));
        }
        if !(self.comfort_threshold > 0.0) {
            return Err(Error::invariant("train.comfort_threshold", "comfort_threshold > 0"));
        }
        if !(self.collision_penalty >= 0.0) {
            return Err(Error::invariant("train.collision_penalty", "collision_penalty >= 0"));
        }
        if self.decision_interval == 0 {
            return Err(Error::invariant("train.decision_interval", "decision_interval >= 1"));
        }
        if self.train_every == 0 {
            return Err(Error::invariant("train.train_every", "train_every >= 1"));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::invariant("train.grad_clip", "grad_clip >= 0"));
        }
        if !(self.logit_penalty >= 0.0) {
            return Err(Error::invariant("train.logit_penalty", "logit_penalty >= 0"));
        }
        Ok(())
    }

    /// Exploit probability after `fraction` of training.
    pub fn epsilon(&self, fraction: f64) -> f64 {
        let ramp = (fraction / self.epsilon_ramp).clamp(0.0, 1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * ramp
    }
}

/// Per-vehicle comfort score: 3 for a gentle KL step, 2 for a KL step with
/// |accel| at or above the threshold, 1 during a lane change, 0 in ES.
pub fn comfort(accel: f64, action: Action, threshold: f64) -> u8 {
    match action {
        Action::KeepLane if accel.abs() < threshold => 3,
        Action::KeepLane => 2,
        Action::ChangeLeft | Action::ChangeRight => 1,
        Action::EmergencyStop => 0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardBreakdown {
    pub v_bar: f64,
    pub c_bar: f64,
    pub reward: f64,
}

/// The shared reward w * mean speed + mean comfort over every moving vehicle
/// (obstacles excluded). `executed[id]` is the action vehicle `id` executed
/// in the step that produced `world`; accelerations are read from `world`.
pub fn global_reward(world: &WorldState, executed: &[Action], weight: f64, threshold: f64) -> RewardBreakdown {
    let mut n = 0usize;
    let mut speed = 0.0;
    let mut comfort_sum = 0u64;
    for v in world.vehicles.iter().filter(|v| v.kind != VehicleKind::Obstacle) {
        n += 1;
        speed += v.velocity;
        comfort_sum += comfort(v.accel, executed[v.id], threshold) as u64;
    }
    if n == 0 {
        return RewardBreakdown {
            v_bar: 0.0,
            c_bar: 0.0,
            reward: 0.0,
        };
    }
    let v_bar = speed / n as f64;
    let c_bar = comfort_sum as f64 / n as f64;
    RewardBreakdown {
        v_bar,
        c_bar,
        reward: weight * v_bar + c_bar,
    }
}


#[cfg(test)]
mod learning_tests;
