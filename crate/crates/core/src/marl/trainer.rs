use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::nets::{actor_objective, critic_loss, ActorSample, CriticSample};
use super::{ActorNet, CriticNet, Env, ReplayBuffer, StepOutcome, TrainConfig, Transition};
use crate::action::Action;
use crate::error::{Error, Result};
use crate::neural::{argmax, soft_update, AdamState, Params};
use crate::perception::HistoryWindow;
use crate::safety::SafetyVerdict;

/// Totals for one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub steps: usize,
    pub total_reward: f64,
    pub mean_v_bar: f64,
    pub mean_c_bar: f64,
    pub unsafe_actions: u64,
    pub collisions: u64,
    pub es_count: u64,
    pub min_headway: f64,
    /// Ended by a collision before the time limit.
    pub terminated_early: bool,
    /// Mean pre-step critic loss over the episode's updates (0 if none).
    pub mean_critic_loss: f64,
}

/// Actors, critics, their targets and optimizers, and the replay buffer.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    agents: usize,
    row_width: usize,
    pub(super) actors: Vec<ActorNet>,
    pub(super) target_actors: Vec<ActorNet>,
    pub(super) critics: Vec<CriticNet>,
    pub(super) target_critics: Vec<CriticNet>,
    actor_opt: Vec<AdamState>,
    critic_opt: Vec<AdamState>,
    replay: ReplayBuffer,
    pub(super) rng: ChaCha8Rng,
    pub(super) env_steps: u64,
    pub(super) episodes_done: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, agents: usize, row_width: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if agents == 0 {
            return Err(Error::InvalidArgument("a trainer needs at least one agent".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slots = if config.share_weights { 1 } else { agents };
        let actors: Vec<ActorNet> = (0..slots)
            .map(|_| ActorNet::new(row_width, config.hidden, &mut rng))
            .collect();
        let critics: Vec<CriticNet> = (0..slots)
            .map(|_| CriticNet::new(agents, row_width, config.hidden, &mut rng))
            .collect();
        Ok(Trainer {
            actor_opt: actors.iter().map(|a| AdamState::new(a, config.lr)).collect(),
            critic_opt: critics.iter().map(|c| AdamState::new(c, config.lr)).collect(),
            target_actors: actors.clone(),
            target_critics: critics.clone(),
            actors,
            critics,
            replay: ReplayBuffer::new(config.buffer_capacity),
            agents,
            row_width,
            config,
            rng,
            env_steps: 0,
            episodes_done: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn row_width(&self) -> usize {
        self.row_width
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    fn slot(&self, agent: usize) -> usize {
        if self.config.share_weights {
            0
        } else {
            agent
        }
    }

    pub fn actor(&self, agent: usize) -> &ActorNet {
        &self.actors[self.slot(agent)]
    }

    pub fn actor_mut(&mut self, agent: usize) -> &mut ActorNet {
        let s = self.slot(agent);
        &mut self.actors[s]
    }

    pub fn critic(&self, agent: usize) -> &CriticNet {
        &self.critics[self.slot(agent)]
    }

    pub fn critic_mut(&mut self, agent: usize) -> &mut CriticNet {
        let s = self.slot(agent);
        &mut self.critics[s]
    }

    pub fn target_actor(&self, agent: usize) -> &ActorNet {
        &self.target_actors[self.slot(agent)]
    }

    pub fn target_critic(&self, agent: usize) -> &CriticNet {
        &self.target_critics[self.slot(agent)]
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn replay_mut(&mut self) -> &mut ReplayBuffer {
        &mut self.replay
    }

    /// With probability `epsilon` propose the actor's argmax, otherwise a
    /// uniformly random policy action; either way the shield decides.
    pub fn select_action(
        &mut self,
        agent: usize,
        window: &HistoryWindow,
        epsilon: f64,
        shield: impl FnOnce(Action) -> SafetyVerdict,
    ) -> Result<SafetyVerdict> {
        let proposed = if self.rng.random_bool(epsilon.clamp(0.0, 1.0)) {
            let probs = self.actor(agent).probs(window)?;
            Action::from_policy_index(argmax(&probs))
        } else {
            *Action::POLICY.choose(&mut self.rng).expect("non-empty")
        };
        Ok(shield(proposed))
    }

    /// The agent whose action slot the target or actor fills for each sample.
    fn own_agents(&mut self, agent: usize, n: usize) -> Vec<usize> {
        if self.config.share_weights {
            (0..n).map(|_| self.rng.random_range(0..self.agents)).collect()
        } else {
            vec![agent; n]
        }
    }

    fn targets_for(&self, agent: usize, batch: &[Arc<Transition>], own: &[usize]) -> Result<Vec<f64>> {
        let critic = self.target_critic(agent);
        let mut ys = Vec::with_capacity(batch.len());
        for (t, &me) in batch.iter().zip(own) {
            if t.done {
                ys.push(t.reward);
                continue;
            }
            let mut actions = Vec::with_capacity(self.agents);
            for j in 0..self.agents {
                let replayed = match &t.next_actions {
                    Some(next) if self.config.replayed_next_actions && j != me => Some(next[j].one_hot()),
                    _ => None,
                };
                let a = match replayed {
                    Some(a) => a,
                    None => {
                        let p = self.target_actor(j).probs(&t.next_observations[j])?;
                        [p[0], p[1], p[2]]
                    }
                };
                actions.push(a);
            }
            let q = critic.q(&t.next_observations, &actions)?;
            ys.push(t.reward + self.config.gamma * q);
        }
        Ok(ys)
    }

    /// Regression targets r + gamma * Q'(o', a') for `agent`'s critic, with
    /// every a' from the target actors (unless replayed actions are enabled).
    pub fn critic_targets(&mut self, agent: usize, batch: &[Arc<Transition>]) -> Result<Vec<f64>> {
        let own = self.own_agents(agent, batch.len());
        self.targets_for(agent, batch, &own)
    }

    /// One Adam step on the mean squared Bellman error. Returns the loss
    /// before the step.
    pub fn critic_update(&mut self, agent: usize, batch: &[Arc<Transition>]) -> Result<f64> {
        let ys = self.critic_targets(agent, batch)?;
        let samples: Vec<CriticSample<'_>> = batch
            .iter()
            .zip(&ys)
            .map(|(t, &y)| CriticSample {
                windows: &t.observations,
                actions: t.actions.iter().map(|a| a.one_hot()).collect(),
                target: y,
            })
            .collect();
        let s = self.slot(agent);
        let (loss, mut grad) = critic_loss(&self.critics[s], &samples)?;
        clip(&mut grad, self.config.grad_clip);
        self.critic_opt[s].update(&mut self.critics[s], &grad)?;
        Ok(loss)
    }

    /// One Adam ascent step on the critic's value of the actor's relaxed
    /// action. Returns the gradient norm before clipping.
    pub fn actor_update(&mut self, agent: usize, batch: &[Arc<Transition>]) -> Result<f64> {
        let own = self.own_agents(agent, batch.len());
        let samples: Vec<ActorSample<'_>> = batch
            .iter()
            .zip(&own)
            .map(|(t, &me)| ActorSample {
                windows: &t.observations,
                actions: t.actions.iter().map(|a| a.one_hot()).collect(),
                agent: me,
            })
            .collect();
        let s = self.slot(agent);
        let (_, mut grad) = actor_objective(&self.actors[s], &self.critics[s], &samples, self.config.logit_penalty)?;
        let norm = grad.l2_norm();
        grad.scale(-1.0);
        clip(&mut grad, self.config.grad_clip);
        self.actor_opt[s].update(&mut self.actors[s], &grad)?;
        Ok(norm)
    }

    pub fn soft_update_targets(&mut self) -> Result<()> {
        let tau = self.config.tau;
        for (t, o) in self.target_actors.iter_mut().zip(&self.actors) {
            soft_update(t, o, tau)?;
        }
        for (t, o) in self.target_critics.iter_mut().zip(&self.critics) {
            soft_update(t, o, tau)?;
        }
        Ok(())
    }

    /// One critic and one actor update per network, each on its own
    /// minibatch. Returns the mean critic loss, or None before warmup.
    pub fn learn(&mut self) -> Result<Option<f64>> {
        if self.replay.len() < self.config.warmup.max(1) {
            return Ok(None);
        }
        let slots = self.actors.len();
        let mut loss = 0.0;
        for s in 0..slots {
            let batch = self.replay.sample(self.config.batch_size, &mut self.rng);
            loss += self.critic_update(s, &batch)?;
            self.actor_update(s, &batch)?;
        }
        Ok(Some(loss / slots as f64))
    }

    /// Run one episode. `exploit(step)` is the probability of following the
    /// actor at that step (1 for greedy evaluation, 0 for the random
    /// baseline). With `learn` set, transitions are stored and the networks
    /// updated.
    pub fn run_episode(
        &mut self,
        env: &mut Env,
        exploit: impl Fn(usize) -> f64,
        learn: bool,
        mut on_step: impl FnMut(&StepOutcome),
    ) -> Result<EpisodeSummary> {
        if env.agents().len() != self.agents {
            return Err(Error::Dimension {
                expected: self.agents,
                got: env.agents().len(),
            });
        }
        let interval = self.config.decision_interval;
        let mut summary = EpisodeSummary {
            episode: self.episodes_done,
            steps: 0,
            total_reward: 0.0,
            mean_v_bar: 0.0,
            mean_c_bar: 0.0,
            unsafe_actions: 0,
            collisions: 0,
            es_count: 0,
            min_headway: f64::INFINITY,
            terminated_early: false,
            mean_critic_loss: 0.0,
        };
        let mut pending: Option<(Vec<HistoryWindow>, Vec<Action>, f64, usize)> = None;
        let mut losses = Vec::new();
        let mut decisions = 0usize;
        let mut step = 0usize;
        while !env.is_done() {
            let decision = step.is_multiple_of(interval);
            let outcome = if decision {
                env.observe();
                let windows = env.windows();
                let epsilon = exploit(step);
                let mut failure = None;
                let outcome = env.step(
                    |k, _, shield| match self.select_action(k, &windows[k], epsilon, shield) {
                        Ok(v) => v,
                        Err(e) => {
                            failure.get_or_insert(e);
                            SafetyVerdict {
                                executed: Action::EmergencyStop,
                                proposed: Action::EmergencyStop,
                                overridden: false,
                                tried: Vec::new(),
                            }
                        }
                    },
                );
                if let Some(e) = failure {
                    return Err(e);
                }
                let executed: Vec<Action> = outcome.verdicts.iter().map(|v| v.executed).collect();
                if let Some((obs, actions, reward, count)) = pending.take() {
                    if learn {
                        self.replay.push(Transition {
                            observations: obs,
                            actions,
                            reward: reward / count as f64,
                            next_observations: windows.clone(),
                            done: false,
                            next_actions: Some(executed.clone()),
                        });
                    }
                }
                pending = Some((windows, executed, outcome.reward, 1));
                decisions += 1;
                if learn && decisions.is_multiple_of(self.config.train_every) {
                    if let Some(l) = self.learn()? {
                        losses.push(l);
                    }
                }
                outcome
            } else {
                let outcome = env.step(|_, _, shield| shield(Action::KeepLane));
                if let Some(p) = pending.as_mut() {
                    p.2 += outcome.reward;
                    p.3 += 1;
                }
                outcome
            };
            step += 1;
            self.env_steps += 1;
            if learn && self.env_steps.is_multiple_of(self.config.target_update_every as u64) {
                self.soft_update_targets()?;
            }
            let r = &outcome.record;
            summary.steps += 1;
            summary.total_reward += outcome.reward;
            summary.mean_v_bar += r.v_bar_mps;
            summary.mean_c_bar += r.c_bar;
            summary.unsafe_actions += r.unsafe_actions as u64;
            summary.collisions += r.collisions as u64;
            summary.es_count += r.es_count as u64;
            summary.min_headway = summary.min_headway.min(r.min_headway_m);
            let terminal = outcome.done && r.collisions > 0;
            summary.terminated_early = terminal;
            on_step(&outcome);
            if outcome.done {
                if let Some((obs, actions, reward, count)) = pending.take() {
                    if learn {
                        env.observe();
                        self.replay.push(Transition {
                            observations: obs,
                            actions,
                            reward: reward / count as f64,
                            next_observations: env.windows(),
                            done: terminal,
                            next_actions: None,
                        });
                    }
                }
            }
        }
        if summary.steps > 0 {
            summary.mean_v_bar /= summary.steps as f64;
            summary.mean_c_bar /= summary.steps as f64;
        }
        if !losses.is_empty() {
            summary.mean_critic_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        }
        if learn {
            self.episodes_done += 1;
        }
        Ok(summary)
    }

    /// Full training run: `make_env(episode)` builds each episode's
    /// environment. The exploit probability follows the configured schedule
    /// over the total number of steps.
    pub fn train(
        &mut self,
        make_env: impl FnMut(usize) -> Result<Env>,
        on_step: impl FnMut(usize, &StepOutcome),
    ) -> Result<Vec<EpisodeSummary>> {
        self.train_while(make_env, on_step, |_| true)
    }

    /// `train`, stopping before any episode for which `keep_going` on the
    /// summaries so far returns false.
    pub fn train_while(
        &mut self,
        mut make_env: impl FnMut(usize) -> Result<Env>,
        mut on_step: impl FnMut(usize, &StepOutcome),
        mut keep_going: impl FnMut(&[EpisodeSummary]) -> bool,
    ) -> Result<Vec<EpisodeSummary>> {
        let episodes = self.config.episodes;
        let mut out = Vec::with_capacity(episodes);
        for ep in 0..episodes {
            if !keep_going(&out) {
                break;
            }
            let mut env = make_env(ep)?;
            let steps = env.config().scenario.max_timesteps.max(1);
            let cfg = self.config.clone();
            let summary = self.run_episode(
                &mut env,
                |step| cfg.epsilon((ep * steps + step) as f64 / (episodes * steps) as f64),
                true,
                |o| on_step(ep, o),
            )?;
            out.push(summary);
        }
        Ok(out)
    }
}

/// Greedy action of a trained actor on the agent's own history, shielded.
pub fn act_decentralized(
    actor: &ActorNet,
    window: &HistoryWindow,
    shield: impl FnOnce(Action) -> SafetyVerdict,
) -> Result<SafetyVerdict> {
    let probs = actor.probs(window)?;
    Ok(shield(Action::from_policy_index(argmax(&probs))))
}

fn clip<P: Params>(grad: &mut P, max_norm: f64) {
    if max_norm > 0.0 {
        let norm = grad.l2_norm();
        if norm > max_norm {
            grad.scale(max_norm / norm);
        }
    }
}
