use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

/// `(s, a, R, R_L, s')` with rewards already scaled for learning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub local_rewards: Vec<f64>,
    pub next_state: Vec<f64>,
}

/// Ring buffer of transitions; the oldest entry is overwritten when full.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: Vec::new(),
            next: 0,
        })
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

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// `m` distinct indices, uniformly at random.
    pub fn sample_indices(&self, m: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if m == 0 || m > self.items.len() {
            return Err(Error::Contract(format!(
                "cannot draw {m} distinct transitions from {}",
                self.items.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), m).into_vec())
    }

    pub fn sample(&self, m: usize, rng: &mut Rng) -> Result<Batch> {
        let idx = self.sample_indices(m, rng)?;
        Batch::from_transitions(idx.iter().map(|&i| &self.items[i]))
    }
}

/// Row-stacked transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub local_rewards: Array2<f64>,
    pub next_states: Array2<f64>,
}

impl Batch {
    pub fn from_transitions<'a>(items: impl IntoIterator<Item = &'a Transition>) -> Result<Self> {
        let items: Vec<&Transition> = items.into_iter().collect();
        let first = items
            .first()
            .ok_or_else(|| Error::Contract("a batch needs at least one transition".into()))?;
        let (ds, da, db) = (first.state.len(), first.action.len(), first.local_rewards.len());
        let m = items.len();
        let mut b = Batch {
            states: Array2::zeros((m, ds)),
            actions: Array2::zeros((m, da)),
            rewards: Array1::zeros(m),
            local_rewards: Array2::zeros((m, db)),
            next_states: Array2::zeros((m, ds)),
        };
        for (i, t) in items.iter().enumerate() {
            if t.state.len() != ds || t.next_state.len() != ds || t.action.len() != da || t.local_rewards.len() != db {
                return Err(Error::Shape("transitions in a batch differ in shape".into()));
            }
            b.states.row_mut(i).assign(&ndarray::aview1(&t.state));
            b.actions.row_mut(i).assign(&ndarray::aview1(&t.action));
            b.rewards[i] = t.reward;
            b.local_rewards.row_mut(i).assign(&ndarray::aview1(&t.local_rewards));
            b.next_states.row_mut(i).assign(&ndarray::aview1(&t.next_state));
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}
