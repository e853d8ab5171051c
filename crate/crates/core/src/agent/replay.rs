use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

/// One agent's view of a step: shared state, own action, own credited and
/// normalized reward.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Arc<[f64]>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Arc<[f64]>,
    pub done: bool,
    /// Feasible actions in `next_state`, used to pick the greedy next action.
    pub next_mask: Arc<[bool]>,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), items: Vec::new(), next: 0 }
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
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Distinct indices within one minibatch; `None` when fewer than `batch` items.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        if self.items.len() < batch || batch == 0 {
            return None;
        }
        let picks = index::sample(rng, self.items.len(), batch);
        Some(picks.iter().map(|i| &self.items[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(action: usize) -> Transition {
        let s: Arc<[f64]> = Arc::from(vec![0.0]);
        Transition { state: s.clone(), action, reward: 0.0, next_state: s, done: false, next_mask: Arc::from(vec![true]) }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = ReplayBuffer::new(3);
        for a in 0..5 {
            buf.push(tr(a));
        }
        assert_eq!(buf.len(), 3);
        let mut actions: Vec<_> = buf.items.iter().map(|t| t.action).collect();
        actions.sort();
        assert_eq!(actions, vec![2, 3, 4]);
    }

    #[test]
    fn sampling_is_without_replacement() {
        let mut buf = ReplayBuffer::new(10);
        for a in 0..10 {
            buf.push(tr(a));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(buf.sample(11, &mut rng).is_none());
        let mut got: Vec<_> = buf.sample(10, &mut rng).unwrap().iter().map(|t| t.action).collect();
        got.sort();
        assert_eq!(got, (0..10).collect::<Vec<_>>());
    }
}
