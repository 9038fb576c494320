//! Ring replay buffers with uniform sampling.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{DiclError, Result};

/// A minibatch of transitions, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub observations: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_observations: Array2<f64>,
    /// 1.0 when the transition ended in a terminal state.
    pub dones: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Fixed-capacity ring of `(s, a, r, s', done)` transitions. Storage grows
/// lazily up to `capacity`, after which the oldest entries are overwritten.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    obs_dim: usize,
    act_dim: usize,
    capacity: usize,
    cursor: usize,
    observations: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_observations: Vec<f64>,
    dones: Vec<f64>,
}

impl ReplayBuffer {
    pub fn new(obs_dim: usize, act_dim: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 || obs_dim == 0 {
            return Err(DiclError::invalid("replay buffer needs capacity > 0 and obs_dim > 0"));
        }
        Ok(Self {
            obs_dim,
            act_dim,
            capacity,
            cursor: 0,
            observations: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_observations: Vec::new(),
            dones: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Index the next insertion will write to.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn push(&mut self, obs: &[f64], action: &[f64], reward: f64, next_obs: &[f64], done: bool) -> Result<()> {
        for (got, expected) in [
            (obs.len(), self.obs_dim),
            (action.len(), self.act_dim),
            (next_obs.len(), self.obs_dim),
        ] {
            if got != expected {
                return Err(DiclError::DimMismatch { expected, got });
            }
        }
        let done = if done { 1.0 } else { 0.0 };
        if self.len() < self.capacity {
            self.observations.extend_from_slice(obs);
            self.actions.extend_from_slice(action);
            self.rewards.push(reward);
            self.next_observations.extend_from_slice(next_obs);
            self.dones.push(done);
        } else {
            let i = self.cursor;
            let (o, a) = (self.obs_dim, self.act_dim);
            self.observations[i * o..(i + 1) * o].copy_from_slice(obs);
            self.actions[i * a..(i + 1) * a].copy_from_slice(action);
            self.rewards[i] = reward;
            self.next_observations[i * o..(i + 1) * o].copy_from_slice(next_obs);
            self.dones[i] = done;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Gather the given slots into a batch.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let (o, a) = (self.obs_dim, self.act_dim);
        let n = indices.len();
        let pick = |src: &[f64], w: usize| Array2::from_shape_fn((n, w), |(r, c)| src[indices[r] * w + c]);
        Batch {
            observations: pick(&self.observations, o),
            actions: pick(&self.actions, a),
            rewards: indices.iter().map(|&i| self.rewards[i]).collect(),
            next_observations: pick(&self.next_observations, o),
            dones: indices.iter().map(|&i| self.dones[i]).collect(),
        }
    }

    /// Uniform sampling with replacement over the filled region.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.is_empty() {
            return Err(DiclError::invalid("cannot sample from an empty replay buffer"));
        }
        let len = self.len();
        Ok((0..n).map(|_| rng.random_range(0..len)).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        Ok(self.gather(&self.sample_indices(n, rng)?))
    }
}
