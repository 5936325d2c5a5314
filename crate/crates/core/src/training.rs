//! Minibatch scheduling shared by all trainers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of one optimisation run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl TrainRun {
    pub fn new(learning_rate: f64, batch_size: usize, weight_decay: f64, iterations: usize, seed: u64) -> Self {
        TrainRun {
            learning_rate,
            batch_size,
            weight_decay,
            iterations,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be > 0"));
        }
        Ok(())
    }
}

impl Default for TrainRun {
    fn default() -> Self {
        TrainRun::new(0.005, 64, 0.0, 5000, 0)
    }
}

/// Seeded epochs of shuffled indices drawn without replacement.
pub struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        let batch = batch.min(n).max(1);
        Batcher {
            order: (0..n).collect(),
            cursor: n,
            batch,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.cursor + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let start = self.cursor;
        self.cursor += self.batch;
        &self.order[start..self.cursor]
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
