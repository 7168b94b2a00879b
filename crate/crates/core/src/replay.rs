//! Ring-buffer replay memory shared by every learner.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grad::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    /// The executed (squashed) action.
    pub action: Vec<f64>,
    /// `[r¹ … rᴷ, rᴹ]`.
    pub rewards: Vec<f64>,
    pub next_state: Vec<f64>,
    pub done: bool,
}

impl Transition {
    fn is_finite(&self) -> bool {
        [&self.state, &self.action, &self.rewards, &self.next_state]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

#[derive(Clone, Debug)]
pub struct ReplayMemory {
    capacity: usize,
    items: VecDeque<Transition>,
    pushed: u64,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::new(),
            pushed: 0,
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

    /// Total insertions, including evicted ones.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Appends `t`, evicting the oldest entry when full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite transition rejected (insertion #{}): {t:?}",
                self.pushed
            )));
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.pushed += 1;
        Ok(())
    }

    /// `n` draws, uniform with replacement.
    pub fn sample_minibatch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if n == 0 || self.items.len() < n {
            return Err(Error::NotReady {
                size: self.items.len(),
                needed: n,
            });
        }
        Ok((0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }
}

/// A minibatch laid out as row-major matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub states: Tensor,
    pub actions: Tensor,
    /// `[batch, K + 1]`.
    pub rewards: Tensor,
    pub next_states: Tensor,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidInput("empty minibatch".into()));
        }
        let rows = |f: fn(&Transition) -> &Vec<f64>| Tensor::from_rows(&items.iter().map(|t| f(t)).collect::<Vec<_>>());
        Ok(Self {
            states: rows(|t| &t.state)?,
            actions: rows(|t| &t.action)?,
            rewards: rows(|t| &t.rewards)?,
            next_states: rows(|t| &t.next_state)?,
            dones: items.iter().map(|t| t.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reward column `task` as a `[batch, 1]` matrix.
    pub fn reward_column(&self, task: usize) -> Tensor {
        let data = (0..self.len()).map(|r| self.rewards.get(r, task)).collect();
        Tensor::new(vec![self.len(), 1], data).expect("non-empty batch")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(i: usize) -> Transition {
        let x = i as f64;
        Transition {
            state: vec![x, -x],
            action: vec![0.1 * x, 0.0],
            rewards: vec![-x, -x, -2.0 * x],
            next_state: vec![x + 1.0, -x],
            done: false,
        }
    }

    #[test]
    fn push_grows_and_evicts_fifo() {
        let mut mem = ReplayMemory::new(2);
        mem.push(tr(1)).unwrap();
        assert_eq!(mem.len(), 1);
        mem.push(tr(2)).unwrap();
        mem.push(tr(3)).unwrap();
        assert_eq!(mem.len(), 2);
        assert_eq!(mem.get(0), Some(&tr(2)));
        assert_eq!(mem.get(1), Some(&tr(3)));
        assert_eq!(mem.pushed(), 3);
    }

    #[test]
    fn large_capacity_never_evicts() {
        let mut mem = ReplayMemory::new(5_000_000);
        let t = tr(7);
        for _ in 0..1_000_000 {
            mem.push(t.clone()).unwrap();
        }
        assert_eq!(mem.len(), 1_000_000);
    }

    #[test]
    fn rejects_non_finite() {
        let mut mem = ReplayMemory::new(4);
        let mut t = tr(1);
        t.rewards[2] = f64::NAN;
        assert!(mem.push(t).is_err());
        assert!(mem.is_empty());
    }

    #[test]
    fn sampling_requires_enough_items() {
        let mut mem = ReplayMemory::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(mem.sample_minibatch(1, &mut rng), Err(Error::NotReady { .. })));
        mem.push(tr(5)).unwrap();
        let b = mem.sample_minibatch(1, &mut rng).unwrap();
        assert_eq!(b, vec![&tr(5)]);
        assert!(mem.sample_minibatch(2, &mut rng).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let mut mem = ReplayMemory::new(100);
        for i in 0..50 {
            mem.push(tr(i)).unwrap();
        }
        let a: Vec<_> = mem.sample_minibatch(32, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b: Vec<_> = mem.sample_minibatch(32, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_is_uniform() {
        let mut mem = ReplayMemory::new(10);
        for i in 0..10 {
            mem.push(tr(i)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut counts = [0usize; 10];
        let draws = mem.sample_minibatch(100_000, &mut rng);
        // the sampler insists on size ≥ n, so draw in chunks
        assert!(draws.is_err());
        for _ in 0..10_000 {
            for t in mem.sample_minibatch(10, &mut rng).unwrap() {
                counts[t.state[0] as usize] += 1;
            }
        }
        for c in counts {
            let freq = c as f64 / 100_000.0;
            assert!((freq - 0.1).abs() < 0.005, "{counts:?}");
        }
    }

    #[test]
    fn batch_layout() {
        let items = [tr(1), tr(2)];
        let refs: Vec<&Transition> = items.iter().collect();
        let b = Batch::from_transitions(&refs).unwrap();
        assert_eq!(b.states.shape(), &[2, 2]);
        assert_eq!(b.rewards.shape(), &[2, 3]);
        assert_eq!(b.reward_column(2).data(), &[-2.0, -4.0]);
    }
}
