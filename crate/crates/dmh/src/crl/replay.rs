//! Uniform-sampling ring replay buffer for off-policy learning.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Flat action index over the rule-major D x V space.
    pub action: usize,
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub terminal: bool,
    /// Valid-action mask of the state the action was taken in.
    pub mask: Vec<bool>,
    /// Valid-action mask of the next state; all-false on terminal.
    pub next_mask: Vec<bool>,
}

pub struct ReplayBuffer {
    data: Vec<Transition>,
    capacity: usize,
    write: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        assert!(capacity > 0);
        ReplayBuffer {
            data: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            write: 0,
            inserted: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        debug_assert!(t.cost >= 0.0);
        debug_assert!(t.terminal || t.next_mask.iter().any(|&m| m));
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.write] = t;
        }
        self.write = (self.write + 1) % self.capacity;
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Uniform batch with replacement, assembled into dense arrays.
    pub fn sample(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Batch {
        assert!(!self.data.is_empty());
        let state_dim = self.data[0].state.len();
        let action_dim = self.data[0].next_mask.len();
        let mut states = Array2::zeros((batch_size, state_dim));
        let mut next_states = Array2::zeros((batch_size, state_dim));
        let mut rewards = Array1::zeros(batch_size);
        let mut costs = Array1::zeros(batch_size);
        let mut actions = Vec::with_capacity(batch_size);
        let mut terminals = Vec::with_capacity(batch_size);
        let mut masks = Array2::zeros((batch_size, action_dim));
        let mut next_masks = Array2::zeros((batch_size, action_dim));
        for i in 0..batch_size {
            let t = &self.data[rng.gen_range(0..self.data.len())];
            states.row_mut(i).assign(&Array1::from_vec(t.state.clone()));
            next_states
                .row_mut(i)
                .assign(&Array1::from_vec(t.next_state.clone()));
            rewards[i] = t.reward;
            costs[i] = t.cost;
            actions.push(t.action);
            terminals.push(t.terminal);
            for (j, &m) in t.mask.iter().enumerate() {
                masks[[i, j]] = if m { 1.0 } else { 0.0 };
            }
            for (j, &m) in t.next_mask.iter().enumerate() {
                next_masks[[i, j]] = if m && !t.terminal { 1.0 } else { 0.0 };
            }
        }
        Batch {
            states,
            actions,
            next_states,
            rewards,
            costs,
            terminals,
            masks,
            next_masks,
        }
    }
}

/// Dense minibatch view used by the critic and actor updates.
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Vec<usize>,
    pub next_states: Array2<f64>,
    pub rewards: Array1<f64>,
    pub costs: Array1<f64>,
    pub terminals: Vec<bool>,
    pub masks: Array2<f64>,
    pub next_masks: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn transition(tag: f64) -> Transition {
        Transition {
            state: vec![tag, 0.0],
            action: 0,
            next_state: vec![tag + 0.5, 0.0],
            reward: tag,
            cost: 0.0,
            terminal: false,
            mask: vec![true, false],
            next_mask: vec![true, true],
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(transition(i as f64));
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.inserted(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let batch = buf.sample(4, &mut rng);
            for &r in batch.rewards.iter() {
                assert!(r >= 2.0, "overwritten item sampled: {r}");
            }
        }
    }

    #[test]
    fn sampling_is_roughly_uniform() {
        let mut buf = ReplayBuffer::new(10);
        for i in 0..10 {
            buf.push(transition(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut hits = [0usize; 10];
        for _ in 0..1000 {
            let batch = buf.sample(10, &mut rng);
            for &r in batch.rewards.iter() {
                hits[r as usize] += 1;
            }
        }
        for h in hits {
            assert!((h as f64 / 10_000.0 - 0.1).abs() < 0.02);
        }
    }

    #[test]
    fn terminal_rows_zero_next_mask() {
        let mut buf = ReplayBuffer::new(2);
        buf.push(Transition {
            terminal: true,
            next_mask: vec![false, false],
            ..transition(1.0)
        });
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = buf.sample(1, &mut rng);
        assert!(batch.next_masks.iter().all(|&m| m == 0.0));
    }
}
