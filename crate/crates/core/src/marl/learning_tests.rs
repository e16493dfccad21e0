use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::neural::{grad_check, Params};
use crate::perception::HistoryWindow;
use crate::safety::identity;

fn random_window(rng: &mut ChaCha8Rng, len: usize, width: usize) -> HistoryWindow {
    HistoryWindow::from_rows(
        (0..len)
            .map(|_| (0..width).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect(),
    )
}

fn random_transition(rng: &mut ChaCha8Rng, agents: usize, len: usize, width: usize) -> Transition {
    Transition {
        observations: (0..agents).map(|_| random_window(rng, len, width)).collect(),
        actions: (0..agents)
            .map(|_| Action::from_policy_index(rng.random_range(0..3)))
            .collect(),
        reward: rng.random_range(0.0..5.0),
        next_observations: (0..agents).map(|_| random_window(rng, len, width)).collect(),
        done: false,
        next_actions: None,
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        hidden: 5,
        batch_size: 4,
        warmup: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn critic_loss_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut critic = CriticNet::new(2, 6, 5, &mut rng);
    let batch: Vec<Transition> = (0..3).map(|_| random_transition(&mut rng, 2, 3, 6)).collect();
    let samples: Vec<CriticSample<'_>> = batch
        .iter()
        .map(|t| CriticSample {
            windows: &t.observations,
            actions: t.actions.iter().map(|a| a.one_hot()).collect(),
            target: t.reward,
        })
        .collect();
    let (_, grad) = critic_loss(&critic, &samples).unwrap();
    let report = grad_check(&mut critic, &grad, |c| critic_loss(c, &samples).unwrap().0, 1e-5);
    assert!(report.max_relative_error < 1e-5, "{report:?}");
}

#[test]
fn actor_objective_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut actor = ActorNet::new(6, 5, &mut rng);
    let critic = CriticNet::new(2, 6, 5, &mut rng);
    let batch: Vec<Transition> = (0..3).map(|_| random_transition(&mut rng, 2, 3, 6)).collect();
    let samples: Vec<ActorSample<'_>> = batch
        .iter()
        .enumerate()
        .map(|(k, t)| ActorSample {
            windows: &t.observations,
            actions: t.actions.iter().map(|a| a.one_hot()).collect(),
            agent: k % 2,
        })
        .collect();
    for penalty in [0.0, 0.05] {
        let (_, grad) = actor_objective(&actor, &critic, &samples, penalty).unwrap();
        let report = grad_check(
            &mut actor,
            &grad,
            |a| actor_objective(a, &critic, &samples, penalty).unwrap().0,
            1e-5,
        );
        assert!(report.max_relative_error < 1e-5, "penalty {penalty}: {report:?}");
    }
}

#[test]
fn zero_critic_gives_zero_actor_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let actor = ActorNet::new(6, 5, &mut rng);
    let mut critic = CriticNet::new(1, 6, 5, &mut rng);
    critic.zero();
    let t = random_transition(&mut rng, 1, 3, 6);
    let samples = [ActorSample {
        windows: &t.observations,
        actions: vec![[0.0; 3]],
        agent: 0,
    }];
    let (_, grad) = actor_objective(&actor, &critic, &samples, 0.0).unwrap();
    assert_eq!(grad.l2_norm(), 0.0);
}

#[test]
fn critic_targets_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch: Vec<Arc<Transition>> = (0..4).map(|_| Arc::new(random_transition(&mut rng, 2, 3, 6))).collect();

    // A near-zero discount leaves the reward.
    let mut trainer = Trainer::new(
        TrainConfig {
            gamma: 1e-300,
            ..small_config()
        },
        2,
        6,
        0,
    )
    .unwrap();
    let ys = trainer.critic_targets(0, &batch).unwrap();
    for (y, t) in ys.iter().zip(&batch) {
        assert!((y - t.reward).abs() < 1e-12);
    }

    // A zero target critic leaves the reward.
    let mut trainer = Trainer::new(small_config(), 2, 6, 0).unwrap();
    trainer.target_critics[0].zero();
    let ys = trainer.critic_targets(0, &batch).unwrap();
    for (y, t) in ys.iter().zip(&batch) {
        assert_eq!(*y, t.reward);
    }

    // Per-sample recomputation with the target networks.
    let mut trainer = Trainer::new(small_config(), 2, 6, 9).unwrap();
    let ys = trainer.critic_targets(1, &batch).unwrap();
    for (y, t) in ys.iter().zip(&batch) {
        let actions: Vec<[f64; 3]> = (0..2)
            .map(|j| {
                let p = trainer.target_actor(j).probs(&t.next_observations[j]).unwrap();
                [p[0], p[1], p[2]]
            })
            .collect();
        let q = trainer.target_critic(1).q(&t.next_observations, &actions).unwrap();
        assert!((y - (t.reward + 0.9 * q)).abs() < 1e-12);
    }

    // Terminal transitions do not bootstrap.
    let mut done = random_transition(&mut rng, 2, 3, 6);
    done.done = true;
    let ys = trainer.critic_targets(0, &[Arc::new(done.clone())]).unwrap();
    assert_eq!(ys, vec![done.reward]);
}

#[test]
fn critic_update_returns_squared_error_for_one_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = Arc::new(random_transition(&mut rng, 1, 3, 6));
    let mut trainer = Trainer::new(small_config(), 1, 6, 5).unwrap();
    let y = trainer.critic_targets(0, std::slice::from_ref(&t)).unwrap()[0];
    let q = trainer.critic(0).q(&t.observations, &[t.actions[0].one_hot()]).unwrap();
    let loss = trainer.critic_update(0, std::slice::from_ref(&t)).unwrap();
    assert!((loss - (y - q).powi(2)).abs() < 1e-12);
}

#[test]
fn exploration_is_uniform_over_policy_actions() {
    let mut trainer = Trainer::new(small_config(), 1, 6, 6).unwrap();
    let window = HistoryWindow::zeros(3, 6);
    let mut counts = [0usize; 3];
    let n = 10_000;
    for _ in 0..n {
        let v = trainer.select_action(0, &window, 0.0, identity).unwrap();
        counts[v.executed.policy_index().unwrap()] += 1;
    }
    for c in counts {
        assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
    }
    // Full exploitation is the greedy decentralized action.
    let greedy = act_decentralized(trainer.actor(0), &window, identity).unwrap();
    for _ in 0..20 {
        assert_eq!(trainer.select_action(0, &window, 1.0, identity).unwrap(), greedy);
    }
}

#[test]
fn actor_learns_the_action_the_critic_pays_for() {
    // One-step bandit: terminal transitions paying 1 for CL and 0 otherwise.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut trainer = Trainer::new(small_config(), 1, 6, 7).unwrap();
    let batch: Vec<Arc<Transition>> = (0..24)
        .map(|k| {
            let mut t = random_transition(&mut rng, 1, 3, 6);
            t.actions = vec![Action::from_policy_index(k % 3)];
            t.reward = if k % 3 == 1 { 1.0 } else { 0.0 };
            t.done = true;
            Arc::new(t)
        })
        .collect();
    for _ in 0..300 {
        trainer.critic_update(0, &batch).unwrap();
    }
    for _ in 0..500 {
        trainer.actor_update(0, &batch).unwrap();
    }
    for t in &batch {
        let p = trainer.actor(0).probs(&t.observations[0]).unwrap();
        assert_eq!(crate::neural::argmax(&p), 1, "{p:?}");
    }
}

#[test]
fn soft_update_moves_targets_closer() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut trainer = Trainer::new(small_config(), 2, 6, 8).unwrap();
    let batch: Vec<Arc<Transition>> = (0..4).map(|_| Arc::new(random_transition(&mut rng, 2, 3, 6))).collect();
    trainer.critic_update(0, &batch).unwrap();
    trainer.actor_update(0, &batch).unwrap();
    let distance = |a: &CriticNet, b: &CriticNet| {
        let mut d = a.clone();
        for (x, y) in d.tensors_mut().into_iter().zip(b.tensors()) {
            for (p, q) in x.data_mut().iter_mut().zip(y.data()) {
                *p -= q;
            }
        }
        d.l2_norm()
    };
    let before = distance(trainer.critic(0), trainer.target_critic(0));
    assert!(before > 0.0);
    trainer.soft_update_targets().unwrap();
    let after = distance(trainer.critic(0), trainer.target_critic(0));
    assert!(after < before);
    assert!((after - 0.99 * before).abs() < 1e-9 * before.max(1.0));
}
