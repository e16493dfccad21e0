use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

use crate::action::Action;
use crate::perception::HistoryWindow;

/// One joint decision: every agent's history window before and after, the
/// executed joint action and the shared reward.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub observations: Vec<HistoryWindow>,
    pub actions: Vec<Action>,
    pub reward: f64,
    pub next_observations: Vec<HistoryWindow>,
    /// The episode ended at a terminal state (a collision); time limits are
    /// not terminal.
    pub done: bool,
    /// Actions executed at the next decision, when there was one.
    pub next_actions: Option<Vec<Action>>,
}

/// Fixed-capacity FIFO of transitions with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Arc<Transition>>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            items: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(Arc::new(t));
    }

    pub fn get(&self, index: usize) -> Option<&Arc<Transition>> {
        self.items.get(index)
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices(&self, k: usize, rng: &mut impl Rng) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..k).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn sample(&self, k: usize, rng: &mut impl Rng) -> Vec<Arc<Transition>> {
        self.sample_indices(k, rng)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect()
    }
}
