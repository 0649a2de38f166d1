use rand::Rng;

use crate::env::TransitionRecord;

use super::LearnError;

/// Fixed-capacity ring of transitions; the oldest record is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    records: Vec<TransitionRecord>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, records: Vec::with_capacity(capacity.min(4096)), cursor: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn store(&mut self, record: TransitionRecord) {
        if self.records.len() < self.capacity {
            self.records.push(record);
        } else {
            self.records[self.cursor] = record;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Records from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &TransitionRecord> {
        let split = if self.records.len() < self.capacity { 0 } else { self.cursor };
        self.records[split..].iter().chain(&self.records[..split])
    }

    /// Uniform sampling with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&TransitionRecord>, LearnError> {
        if self.records.len() < batch_size || batch_size == 0 {
            return Err(LearnError::InsufficientExperience { have: self.records.len(), need: batch_size });
        }
        Ok((0..batch_size).map(|_| &self.records[rng.random_range(0..self.records.len())]).collect())
    }

    /// Indices drawn by [`sample_batch`](Self::sample_batch) for the same rng state.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>, LearnError> {
        if self.records.len() < batch_size || batch_size == 0 {
            return Err(LearnError::InsufficientExperience { have: self.records.len(), need: batch_size });
        }
        Ok((0..batch_size).map(|_| rng.random_range(0..self.records.len())).collect())
    }
}
