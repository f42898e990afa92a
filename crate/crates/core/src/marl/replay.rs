use std::collections::VecDeque;

use rand::Rng;

use super::Transition;

/// FIFO experience memory: once full, each push evicts the oldest entry.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity),
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
        self.items.push_back(t);
    }

    /// Uniform sample without replacement; returns everything when the
    /// buffer holds fewer than `batch` items.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        let n = self.items.len();
        if n <= batch {
            return self.items.iter().collect();
        }
        rand::seq::index::sample(rng, n, batch)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }

    /// The `n` most recent transitions, oldest first.
    pub fn recent(&self, n: usize) -> impl Iterator<Item = &Transition> {
        self.items.iter().skip(self.items.len().saturating_sub(n))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }
}
