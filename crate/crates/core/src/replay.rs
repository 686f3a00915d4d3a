//! Transition storage: a fixed-capacity ring buffer with uniform sampling.

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    storage: Vec<Transition>,
    capacity: usize,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer { storage: Vec::with_capacity(capacity.min(4096)), capacity, head: 0 }
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// FIFO eviction once the buffer is at capacity.
    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Uniform sample with replacement; errors when fewer than `batch`
    /// transitions are stored.
    pub fn sample(&self, batch: usize, rng: &mut RngStream) -> Result<Vec<&Transition>> {
        if self.storage.len() < batch {
            return Err(Error::BufferUnderflow { needed: batch, got: self.storage.len() });
        }
        Ok((0..batch).map(|_| &self.storage[rng.below(self.storage.len())]).collect())
    }

    /// Iterates over stored transitions (test support).
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }
}
