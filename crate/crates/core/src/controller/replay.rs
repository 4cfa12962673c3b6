use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controller::observation::ControllerObservation;
use crate::controller::policy::Action;
use crate::error::{AlaError, Result};

/// One transition `⟨s_t, a_t, r_t, s_{t+1}⟩` for a single loss parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub observation: ControllerObservation,
    pub action: Action,
    pub reward: f64,
    pub next_observation: ControllerObservation,
    pub child: usize,
    pub parameter: usize,
    pub step: usize,
    /// Sum of rewards from this step to the end of its episode window.
    pub return_sum: f64,
    /// Number of rewards in `return_sum`.
    pub horizon: usize,
    #[serde(default)]
    pub replayed: bool,
}

impl Episode {
    /// Single-step episode: the return is the reward itself.
    pub fn new(
        observation: ControllerObservation,
        action: Action,
        reward: f64,
        next_observation: ControllerObservation,
        child: usize,
        parameter: usize,
        step: usize,
    ) -> Result<Self> {
        let e = Episode {
            observation,
            action,
            reward,
            next_observation,
            child,
            parameter,
            step,
            return_sum: reward,
            horizon: 1,
            replayed: false,
        };
        e.check()?;
        Ok(e)
    }

    pub fn check(&self) -> Result<()> {
        if ![-1.0, 0.0, 1.0].contains(&self.reward) {
            return Err(AlaError::Input(format!("reward {} not in {{-1,0,1}}", self.reward)));
        }
        if self.observation.len() != self.next_observation.len() {
            return Err(AlaError::Layout("episode observations differ in layout".into()));
        }
        if self.horizon == 0 {
            return Err(AlaError::Input("episode horizon must be positive".into()));
        }
        Ok(())
    }

    /// `Σ_{k≥t} (r_k − b)` over the remaining episode window.
    pub fn advantage(&self, baseline: f64) -> f64 {
        self.return_sum - self.horizon as f64 * baseline
    }
}

/// Bounded FIFO buffer of past episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayMemory {
    items: VecDeque<Episode>,
    capacity: usize,
}

impl ReplayMemory {
    pub const DEFAULT_CAPACITY: usize = 1000;

    pub fn new(capacity: usize) -> Self {
        ReplayMemory {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
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

    pub fn push(&mut self, episode: Episode) -> Result<()> {
        episode.check()?;
        if self.capacity == 0 {
            return Ok(());
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(episode);
        Ok(())
    }

    /// Up to `n` distinct episodes drawn uniformly, marked as replayed.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<Episode> {
        let k = n.min(self.items.len());
        rand::seq::index::sample(rng, self.items.len(), k)
            .into_iter()
            .map(|i| {
                let mut e = self.items[i].clone();
                e.replayed = true;
                e
            })
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Episode> {
        self.items.iter()
    }
}
