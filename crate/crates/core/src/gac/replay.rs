use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Fixed-capacity ring of transitions with uniform sampling.
///
/// Actions are stored in the agent's unit box.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    bootstrap: Vec<bool>,
    len: usize,
    inserted: u64,
}

/// A sampled minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_states: Tensor,
    pub bootstrap: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 || state_dim == 0 || action_dim == 0 {
            return Err(Error::invalid("replay capacity and dimensions must be positive"));
        }
        Ok(Self {
            capacity,
            state_dim,
            action_dim,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            bootstrap: Vec::new(),
            len: 0,
            inserted: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of pushes, including overwritten ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Stores one transition, overwriting the oldest once full.
    pub fn push(&mut self, state: &[f64], action: &[f64], reward: f64, next_state: &[f64], bootstrap: bool) -> Result<()> {
        if state.len() != self.state_dim || next_state.len() != self.state_dim || action.len() != self.action_dim {
            return Err(Error::ShapeMismatch {
                op: "replay_push",
                expected: vec![self.state_dim, self.action_dim],
                actual: vec![state.len(), action.len(), next_state.len()],
            });
        }
        if !reward.is_finite() || state.iter().chain(action).chain(next_state).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("replay transition".into()));
        }
        let slot = (self.inserted % self.capacity as u64) as usize;
        if self.len < self.capacity {
            self.states.extend_from_slice(state);
            self.actions.extend_from_slice(action);
            self.rewards.push(reward);
            self.next_states.extend_from_slice(next_state);
            self.bootstrap.push(bootstrap);
            self.len += 1;
        } else {
            let (sd, ad) = (self.state_dim, self.action_dim);
            self.states[slot * sd..(slot + 1) * sd].copy_from_slice(state);
            self.actions[slot * ad..(slot + 1) * ad].copy_from_slice(action);
            self.rewards[slot] = reward;
            self.next_states[slot * sd..(slot + 1) * sd].copy_from_slice(next_state);
            self.bootstrap[slot] = bootstrap;
        }
        self.inserted += 1;
        Ok(())
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        if self.is_empty() || n == 0 {
            return Err(Error::invalid("cannot sample an empty batch"));
        }
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.len)).collect();
        Ok(self.gather(&idx))
    }

    fn gather(&self, idx: &[usize]) -> Batch {
        let (sd, ad) = (self.state_dim, self.action_dim);
        let pick = |src: &[f64], w: usize| -> Vec<f64> { idx.iter().flat_map(|&i| src[i * w..(i + 1) * w].iter().copied()).collect() };
        let n = idx.len();
        Batch {
            states: Tensor::matrix(n, sd, pick(&self.states, sd)).expect("state rows"),
            actions: Tensor::matrix(n, ad, pick(&self.actions, ad)).expect("action rows"),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_states: Tensor::matrix(n, sd, pick(&self.next_states, sd)).expect("state rows"),
            bootstrap: idx.iter().map(|&i| self.bootstrap[i]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = ReplayBuffer::new(3, 1, 1).unwrap();
        for i in 0..5 {
            buf.push(&[i as f64], &[0.0], i as f64, &[0.0], false).unwrap();
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.inserted(), 5);
        let mut seen: Vec<f64> = buf.rewards.clone();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_is_uniform_over_contents() {
        let mut buf = ReplayBuffer::new(4, 1, 1).unwrap();
        for i in 0..4 {
            buf.push(&[0.0], &[0.0], i as f64, &[0.0], true).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = buf.sample(40_000, &mut rng).unwrap();
        for k in 0..4 {
            let c = b.rewards.iter().filter(|&&r| r == k as f64).count() as f64 / 40_000.0;
            assert!((c - 0.25).abs() < 0.01, "slot {k}: {c}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        let mut buf = ReplayBuffer::new(2, 2, 1).unwrap();
        assert!(buf.push(&[0.0], &[0.0], 0.0, &[0.0, 0.0], true).is_err());
        assert!(buf.push(&[0.0, 0.0], &[f64::NAN], 0.0, &[0.0, 0.0], true).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(buf.sample(4, &mut rng).is_err());
    }
}
