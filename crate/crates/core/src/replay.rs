//! Goal-augmented replay storage with hindsight relabelling.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::env::{wmae, BeamState};
use crate::numerics::RngStream;

/// Tolerance of the stored-reward consistency check.
pub const REWARD_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: BeamState,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: BeamState,
    pub goal: BeamState,
    /// Goal reached at `next_state` (bootstrap is masked).
    pub done: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("reward {reward} disagrees with -wmae(next_state, goal) = {expected}")]
    InconsistentReward { reward: f64, expected: f64 },
    #[error("buffer holds {size} transitions, cannot sample a batch of {batch}")]
    Underfull { size: usize, batch: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HerStrategy {
    Final,
    Future,
}

/// FIFO ring of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    beta: f64,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    /// `beta` is the WMAE weight used to validate stored rewards.
    pub fn new(capacity: usize, beta: f64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            beta,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn push(&mut self, t: Transition) -> Result<(), ReplayError> {
        let expected = -wmae(&t.next_state, &t.goal, self.beta);
        if (t.reward - expected).abs() > REWARD_TOLERANCE {
            return Err(ReplayError::InconsistentReward {
                reward: t.reward,
                expected,
            });
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    /// Uniform sampling with replacement.
    pub fn sample(
        &self,
        batch_size: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<&Transition>, ReplayError> {
        if self.items.len() < batch_size || self.items.is_empty() {
            return Err(ReplayError::Underfull {
                size: self.items.len(),
                batch: batch_size,
            });
        }
        Ok((0..batch_size)
            .map(|_| &self.items[rng.below(self.items.len())])
            .collect())
    }
}

/// Hindsight copies of one episode's transitions with goals replaced by
/// achieved states; reward and `done` are recomputed against the new goal.
pub fn her_relabel(
    episode: &[Transition],
    strategy: HerStrategy,
    k_future: usize,
    beta: f64,
    epsilon: f64,
    rng: &mut RngStream,
) -> Vec<Transition> {
    let Some(last) = episode.last() else {
        return Vec::new();
    };
    let relabel = |t: &Transition, goal: BeamState| {
        let err = wmae(&t.next_state, &goal, beta);
        Transition {
            goal,
            reward: -err,
            done: err <= epsilon,
            ..t.clone()
        }
    };
    match strategy {
        HerStrategy::Final => episode
            .iter()
            .map(|t| relabel(t, last.next_state))
            .collect(),
        HerStrategy::Future => {
            let n = episode.len();
            let mut out = Vec::with_capacity(n * k_future);
            for (i, t) in episode.iter().enumerate() {
                for _ in 0..k_future {
                    let j = i + rng.below(n - i);
                    out.push(relabel(t, episode[j].next_state));
                }
            }
            out
        }
    }
}
