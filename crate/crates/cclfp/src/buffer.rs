//! Fixed-capacity episodic memory maintained by reservoir sampling.
//!
//! Every example from the stream is offered exactly once; after the buffer
//! fills, the i-th offer is kept with probability capacity/i and evicts a
//! uniformly chosen slot, so each example seen so far is retained with
//! probability capacity/seen.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Example;

#[derive(Debug, Clone)]
pub struct MemoryBuffer {
    capacity: usize,
    slots: Vec<Example>,
    seen: u64,
    rng: ChaCha8Rng,
}

impl MemoryBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        MemoryBuffer {
            capacity,
            slots: Vec::with_capacity(capacity),
            seen: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total number of examples offered so far.
    pub fn seen_count(&self) -> u64 {
        self.seen
    }

    pub fn slots(&self) -> &[Example] {
        &self.slots
    }

    /// Offer one stream example for possible storage.
    pub fn offer(&mut self, example: Example) {
        self.seen += 1;
        if self.slots.len() < self.capacity {
            self.slots.push(example);
        } else {
            let j = self.rng.gen_range(0..self.seen);
            if (j as usize) < self.capacity {
                self.slots[j as usize] = example;
            }
        }
    }

    /// Draw `k` examples uniformly without replacement (with replacement
    /// when `k` exceeds the number of stored examples). An empty buffer
    /// yields an empty batch and leaves `rng` untouched.
    pub fn sample(&self, k: usize, rng: &mut ChaCha8Rng) -> Vec<Example> {
        if k == 0 || self.slots.is_empty() {
            return Vec::new();
        }
        let n = self.slots.len();
        if k <= n {
            let mut pool: Vec<usize> = (0..n).collect();
            let mut out = Vec::with_capacity(k);
            for i in 0..k {
                let j = rng.gen_range(i..n);
                pool.swap(i, j);
                out.push(self.slots[pool[i]].clone());
            }
            out
        } else {
            (0..k)
                .map(|_| self.slots[rng.gen_range(0..n)].clone())
                .collect()
        }
    }

    /// Internal generator state, for exact checkpoint restore.
    pub(crate) fn rng_state(&self) -> ([u8; 32], u128, u64) {
        (
            self.rng.get_seed(),
            self.rng.get_word_pos(),
            self.rng.get_stream(),
        )
    }

    pub(crate) fn restore(
        capacity: usize,
        slots: Vec<Example>,
        seen: u64,
        rng_state: ([u8; 32], u128, u64),
    ) -> Self {
        let mut rng = ChaCha8Rng::from_seed(rng_state.0);
        rng.set_stream(rng_state.2);
        rng.set_word_pos(rng_state.1);
        MemoryBuffer {
            capacity,
            slots,
            seen,
            rng,
        }
    }
}
